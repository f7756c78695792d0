import logging
import sys
from argparse import ArgumentParser, ArgumentTypeError, Namespace, RawTextHelpFormatter
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from volseg import __version__
from volseg.autograd import Tensor
from volseg.bench import bench
from volseg.config import RunConfig
from volseg.exceptions import ConfigError, ShapeError, VolsegError
from volseg.losses import LabelVolume
from volseg.metrics import evaluate_volumes, summarize, write_metric_report
from volseg.model import ModelConfig, build_model
from volseg.training import (
    PhantomSpec,
    Trainer,
    generate_dataset,
    load_checkpoint,
    predict_labels,
    run_ablation,
    train_val_datasets,
    write_ablation_report,
)
from volseg.utils import parse_int_list
from volseg.verify import GRADCHECK_EPS, run_gradcheck
from volseg.volume_io import Volume, read_volume, write_volume

log = logging.getLogger(__name__)

description = """
Verify, train, evaluate, ablate and benchmark the volumetric segmentation
kernels. Every command is reproducible given its seeds.

Exit codes: 0 on success, 1 on a runtime or verification failure,
2 on a usage or configuration error.
"""

examples = """
EXAMPLES
========

# Check every gradient against central differences
volseg-cli gradcheck --module all

# Train with a configuration file, overriding the number of epochs
volseg-cli -v train --config run.ini --out-dir runs/full --epochs 20

# Continue an interrupted run from its last checkpoint
volseg-cli train --config run.ini --out-dir runs/full --resume

# Evaluate a checkpoint on freshly generated phantoms
volseg-cli eval --checkpoint runs/full/checkpoint.vskp --phantom-seed 7 \\
--report metrics.csv

# Write phantom volumes, then evaluate on the directory
volseg-cli phantom --out-dir data --count 4
volseg-cli eval --checkpoint runs/full/checkpoint.vskp --data-dir data \\
--report metrics.csv

# Compare the four upsamplers
volseg-cli ablate --axis upsampler --config run.ini --report upsampler.csv

# Time the onsampling forward and backward passes
volseg-cli bench --op onsample_forward --size 8,32,32,32 --reps 3

"""

IMAGE_SUFFIX = "_image.vseg"
LABELS_SUFFIX = "_labels.vseg"
PRED_SUFFIX = "_pred.vseg"


def size_list(value_str: str) -> Tuple[int, ...]:
    """Convert ``"C,D,H,W"`` into four positive ints for argparse."""
    try:
        values = parse_int_list(value_str)
    except ValueError as exc:
        raise ArgumentTypeError(str(exc))
    if len(values) != 4 or min(values) < 1:
        raise ArgumentTypeError(
            f"Expected four positive sizes C,D,H,W, got {value_str}"
        )
    return values


def positive_float_or_none(value_str: str) -> Optional[float]:
    """Convert a string argument value into either a positive float or None."""
    if value_str.lower() == "none":
        return None
    value = float(value_str)
    if value <= 0:
        raise ValueError
    return value


def _log_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    group = common.add_mutually_exclusive_group()
    group.add_argument(
        "-d",
        "--debug",
        help="print lots of debugging statements (loglevel==DEBUG)",
        action="store_const",
        dest="loglevel",
        const=logging.DEBUG,
    )
    group.add_argument(
        "-v",
        "--verbose",
        help="show epochs, checkpoints and the resolved configuration (loglevel==INFO)",
        action="store_const",
        dest="loglevel",
        const=logging.INFO,
    )
    return common


def _add_run_config_args(parser: ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        type=Path,
        help="run configuration file with [model], [train] and [data] sections",
    )
    parser.add_argument(
        "--set",
        action="append",
        dest="overrides",
        metavar="SECTION.KEY=VALUE",
        default=[],
        help="override one configuration value, can be repeated",
    )
    parser.add_argument("--epochs", type=int, help="override train.epochs")
    parser.add_argument(
        "--seed", type=int, help="override train.seed, also used as model seed"
    )


def get_parser(with_examples: bool = False) -> ArgumentParser:
    """Provides an ArgumentParser for the volseg-cli script.

    This function is also used by sphinx to generate the script documentation.

    :param with_examples: set to False by default so that the examples are not
                          present in the sphinx docs (they are put there with
                          a different layout)
    """

    parser = ArgumentParser(
        description=description,
        epilog=examples if with_examples else None,
        formatter_class=RawTextHelpFormatter,
    )

    parser.add_argument(
        "-V",
        "--version",
        action="version",
        version=f"v{__version__}",
    )

    common = _log_parser()
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    gradcheck_parser = subparsers.add_parser(
        "gradcheck",
        parents=[common],
        help="compare tape gradients with central differences",
        formatter_class=RawTextHelpFormatter,
    )
    gradcheck_parser.add_argument(
        "--module",
        choices=["onsampling", "scp_ag", "dsa", "losses", "all"],
        default="all",
        help="operator to check (default: all)",
    )
    gradcheck_parser.add_argument(
        "--seed", type=int, default=0, help="seed of the checked instances (default: 0)"
    )
    gradcheck_parser.add_argument(
        "--eps",
        type=float,
        default=GRADCHECK_EPS,
        help=(
            "perturbation step (default: 1e-6); steps near 1e-4 may straddle the "
            "kinks of the onsampling gather and of relu"
        ),
    )
    gradcheck_parser.add_argument(
        "--threshold",
        type=float,
        default=1e-4,
        help="largest accepted relative error (default: 1e-4)",
    )
    gradcheck_parser.add_argument(
        "--max-elements",
        type=int,
        help="check at most this many elements per parameter (default: all)",
    )

    train_parser = subparsers.add_parser(
        "train",
        parents=[common],
        help="train a model on synthetic phantoms",
        formatter_class=RawTextHelpFormatter,
    )
    _add_run_config_args(train_parser)
    train_parser.add_argument(
        "--out-dir",
        type=Path,
        required=True,
        help="directory of the checkpoint, the CSV log and the resolved configuration",
    )
    train_parser.add_argument(
        "--resume",
        action="store_true",
        help="continue from the checkpoint in the output directory",
    )

    eval_parser = subparsers.add_parser(
        "eval",
        parents=[common],
        help="sliding-window inference, Dice and HD95 report",
        formatter_class=RawTextHelpFormatter,
    )
    eval_parser.add_argument(
        "--checkpoint", type=Path, required=True, help="checkpoint written by train"
    )
    data_group = eval_parser.add_mutually_exclusive_group(required=True)
    data_group.add_argument(
        "--data-dir",
        type=Path,
        help=f"directory of <id>{IMAGE_SUFFIX} and <id>{LABELS_SUFFIX} files",
    )
    data_group.add_argument(
        "--phantom-seed", type=int, help="evaluate on phantoms generated from this seed"
    )
    eval_parser.add_argument(
        "--count",
        type=int,
        default=2,
        help="number of phantoms with --phantom-seed (default: 2)",
    )
    eval_parser.add_argument(
        "--config",
        type=Path,
        help="run configuration whose [data] section shapes the phantoms",
    )
    eval_parser.add_argument(
        "--report", type=Path, required=True, help="CSV report of Dice and HD95"
    )
    eval_parser.add_argument(
        "--predictions-dir",
        type=Path,
        help=f"also write the predicted labels as <id>{PRED_SUFFIX} volumes",
    )
    eval_parser.add_argument(
        "--overlap",
        type=float,
        default=0.5,
        help="overlap fraction of neighboring windows (default: 0.5)",
    )
    eval_parser.add_argument(
        "--workers", type=int, default=1, help="metric worker threads (default: 1)"
    )

    ablate_parser = subparsers.add_parser(
        "ablate",
        parents=[common],
        help="train and evaluate every variant of one axis",
        formatter_class=RawTextHelpFormatter,
    )
    ablate_parser.add_argument(
        "--axis",
        choices=["upsampler", "gate", "decoder", "modules"],
        required=True,
        help="component to vary",
    )
    _add_run_config_args(ablate_parser)
    ablate_parser.add_argument(
        "--out-dir",
        type=Path,
        default=Path("ablation"),
        help="directory of the per-variant runs (default: ablation)",
    )
    ablate_parser.add_argument(
        "--report", type=Path, required=True, help="CSV report, one row per variant"
    )

    bench_parser = subparsers.add_parser(
        "bench",
        parents=[common],
        help="time the forward and backward passes of one operator",
        formatter_class=RawTextHelpFormatter,
    )
    bench_parser.add_argument(
        "--op",
        choices=[
            "conv3d",
            "conv_transpose3d",
            "trilinear_upsample",
            "grid_sample_trilinear",
            "onsample_forward",
            "scp_ag_apply",
            "deform_conv3d",
            "dsa_forward",
        ],
        required=True,
        help="operator to time",
    )
    bench_parser.add_argument(
        "--size",
        type=size_list,
        default=(8, 32, 32, 32),
        help="input size C,D,H,W (default: 8,32,32,32)",
    )
    bench_parser.add_argument(
        "--reps", type=int, default=3, help="timed repetitions (default: 3)"
    )
    bench_parser.add_argument(
        "--seed", type=int, default=0, help="seed of inputs and weights (default: 0)"
    )
    bench_parser.add_argument(
        "--timeout",
        type=positive_float_or_none,
        default=None,
        help="give up after this many seconds (default: None)",
    )

    phantom_parser = subparsers.add_parser(
        "phantom",
        parents=[common],
        help="write synthetic phantom image and label volumes",
        formatter_class=RawTextHelpFormatter,
    )
    phantom_parser.add_argument(
        "--out-dir", type=Path, required=True, help="directory of the written volumes"
    )
    phantom_parser.add_argument(
        "--count", type=int, default=2, help="number of phantoms (default: 2)"
    )
    phantom_parser.add_argument(
        "--seed", type=int, default=0, help="dataset seed (default: 0)"
    )
    phantom_parser.add_argument(
        "--extent",
        type=int,
        default=48,
        help="isotropic extent of every phantom, at least 32 (default: 48)",
    )

    return parser


def get_run_config(args: Namespace) -> RunConfig:
    """Load the configuration file, then apply --set, --epochs and --seed.

    ``--epochs`` also sets the schedule length ``e_max``.

    :raises ConfigError: for an unreadable file, an unknown key or a bad value
    """
    config = RunConfig.from_file(args.config) if args.config else RunConfig()

    for override in args.overrides:
        try:
            target, value = override.split("=", 1)
            section, key = target.strip().split(".", 1)
        except ValueError:
            raise ConfigError(
                f"Invalid override {override!r}, expected SECTION.KEY=VALUE"
            )
        config = config.override(section, key.strip(), value)

    if args.epochs is not None:
        train = replace(config.train, epochs=args.epochs, e_max=args.epochs)
        config = replace(config, train=train)
    if args.seed is not None:
        config = config.override("train", "seed", args.seed)

    return config


Sample = Tuple[str, Tensor, np.ndarray, Tuple[float, float, float]]


def read_data_dir(data_dir: Path) -> List[Sample]:
    """Image tensors and [D, H, W] label arrays of a directory, sorted by id."""
    if not data_dir.is_dir():
        raise FileNotFoundError(f"No data directory {data_dir}")

    samples = []
    for image_path in sorted(data_dir.glob(f"*{IMAGE_SUFFIX}")):
        volume_id = image_path.name[: -len(IMAGE_SUFFIX)]
        labels_path = data_dir / f"{volume_id}{LABELS_SUFFIX}"
        if not labels_path.exists():
            raise FileNotFoundError(f"No labels {labels_path} for {image_path}")
        image = read_volume(image_path)
        labels = read_volume(labels_path)
        samples.append(
            (
                volume_id,
                Tensor(image.data[None]),
                labels.data[0].astype(np.int64),
                image.spacing,
            )
        )

    if not samples:
        raise FileNotFoundError(f"No *{IMAGE_SUFFIX} volumes in {data_dir}")
    return samples


def phantom_samples(args: Namespace) -> List[Sample]:
    spec = RunConfig.from_file(args.config).data if args.config else PhantomSpec()
    spec = replace(spec, seed=args.phantom_seed)
    return [
        (f"phantom{index:03d}", image, labels.values[0], spec.spacing)
        for index, (image, labels) in enumerate(generate_dataset(spec, args.count))
    ]


def cmd_gradcheck(args: Namespace) -> int:
    results = run_gradcheck(
        args.module, seed=args.seed, eps=args.eps, max_elements=args.max_elements
    )

    exit_code = 0
    for result in results:
        passed = result.passed(args.threshold)
        if not passed:
            exit_code = 1
        status = "PASS" if passed else "FAIL"
        print(f"{status} {result.case} {result.group} {result.max_rel_error:.3e}")

    return exit_code


def cmd_train(args: Namespace) -> int:
    config = get_run_config(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    resolved = config.dump()
    (args.out_dir / "config.ini").write_text(resolved)
    log.info("Resolved configuration:\n%s", resolved)

    train_set, val_set = train_val_datasets(
        config.data,
        config.train.train_samples,
        config.train.val_samples,
        config.train.workers,
    )
    model = build_model(config.model, seed=config.train.seed)
    history = Trainer(model, config.train, args.out_dir).fit(
        train_set, val_set, resume=args.resume
    )

    if history:
        last = history[-1]
        print(
            f"epoch {last.epoch}: loss {last.total_loss:.6f} "
            f"mean dice {last.mean_dice:.4f}"
        )
    return 0


def cmd_eval(args: Namespace) -> int:
    if not args.checkpoint.exists():
        raise FileNotFoundError(f"No checkpoint {args.checkpoint}")
    checkpoint = load_checkpoint(args.checkpoint)
    model_config = ModelConfig.from_dict(checkpoint.config)
    model = build_model(model_config)
    model.load_state_dict(checkpoint.params)

    samples = read_data_dir(args.data_dir) if args.data_dir else phantom_samples(args)

    spacings = {tuple(spacing) for _, _, _, spacing in samples}
    if len(spacings) != 1:
        raise ConfigError(
            f"Evaluated volumes must share one spacing, got {sorted(spacings)}"
        )

    volumes = []
    for volume_id, image, gt, spacing in samples:
        LabelVolume(gt, model_config.num_classes)  # label range check
        pred = predict_labels(model, image, model_config.patch_size, args.overlap)[0]
        volumes.append((volume_id, pred, gt))
        if args.predictions_dir is not None:
            args.predictions_dir.mkdir(parents=True, exist_ok=True)
            write_volume(
                args.predictions_dir / f"{volume_id}{PRED_SUFFIX}",
                Volume.labels(pred, spacing),
            )

    rows = evaluate_volumes(
        volumes, model_config.num_classes, spacings.pop(), workers=args.workers
    )
    write_metric_report(rows, args.report)

    summary = summarize(rows)
    print(f"mean_dice {summary['mean_dice']:.6f}")
    print(f"mean_hd95 {summary['mean_hd95']:.6f}")
    return 0


def cmd_ablate(args: Namespace) -> int:
    config = get_run_config(args)
    log.info("Resolved configuration:\n%s", config.dump())

    train_set, val_set = train_val_datasets(
        config.data,
        config.train.train_samples,
        config.train.val_samples,
        config.train.workers,
    )
    rows = run_ablation(
        args.axis,
        config.model,
        config.train,
        train_set,
        val_set,
        args.out_dir,
        model_seed=config.train.seed,
    )
    write_ablation_report(rows, args.report, config.model.num_classes)

    for row in rows:
        print(f"{row.variant} mean_dice {row.metrics['mean_dice']:.6f}")
    return 0


def cmd_bench(args: Namespace) -> int:
    result = bench(
        args.op, args.size, reps=args.reps, seed=args.seed, timeout=args.timeout
    )
    print(
        f"{result.op.value} size {','.join(map(str, result.size))}: "
        f"{result.seconds / result.reps:.6f} s per pass, "
        f"{result.voxels_per_second:.1f} voxels/s"
    )
    return 0


def cmd_phantom(args: Namespace) -> int:
    spec = PhantomSpec(seed=args.seed, extent=(args.extent,) * 3)  # type: ignore
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for index, (image, labels) in enumerate(generate_dataset(spec, args.count)):
        volume_id = f"phantom{index:03d}"
        write_volume(
            args.out_dir / f"{volume_id}{IMAGE_SUFFIX}",
            Volume(image.data[0], spacing=spec.spacing),
        )
        write_volume(
            args.out_dir / f"{volume_id}{LABELS_SUFFIX}",
            Volume.labels(labels.values, spec.spacing),
        )
    print(f"wrote {args.count} phantoms to {args.out_dir}")
    return 0


COMMANDS: Dict[str, Callable[[Namespace], int]] = {
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
    "phantom": cmd_phantom,
}


def main(args: Namespace) -> int:
    """Main entrypoint of the volseg-cli script

    :param args: The parsed command line arguments
    :return: The script exit code (0 = ok, 1 = runtime or verification
             failure, 2 = usage or configuration error)
    """

    # Set requested log level
    if args.loglevel is not None:
        logging.basicConfig(level=args.loglevel)

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ShapeError, FileNotFoundError, NotADirectoryError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2
    except (VolsegError, TimeoutError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


def volseg_cli(argv: Optional[Sequence[str]] = None) -> None:
    """Synchronously invoke ``main`` with the parsed command line arguments.

    Registered as the ``volseg-cli`` console script.
    """
    # Get arguments from command line
    parser = get_parser(with_examples=True)
    args = parser.parse_args(argv)

    try:
        sys.exit(main(args))
    except KeyboardInterrupt:  # pragma: no cover
        sys.exit(1)
