import csv
import logging

import pytest

from volseg import __version__
from volseg.autograd.functional import Linear
from volseg.cli import get_parser, get_run_config, main, read_data_dir
from volseg.exceptions import ConfigError
from volseg.model import ModelConfig, build_model
from volseg.nn import UpsamplerKind
from volseg.training import (
    AdamWState,
    Checkpoint,
    ScheduleState,
    load_checkpoint,
    save_checkpoint,
)
from volseg.volume_io import VolumeKind, read_volume

SMALL_RUN = """
[model]
base_channels = 2
depth = 3
patch_size = 8
upsampler = trilinear
gate = none
decoder_block = basic

[train]
epochs = 1
batch_size = 1
train_samples = 1
val_samples = 1

[data]
extent = 32
"""


@pytest.fixture
def parser():
    return get_parser()


@pytest.fixture
def checkpoint_path(tmp_path):
    """Checkpoint of an untrained model, which predicts background everywhere."""
    config = ModelConfig(
        base_channels=2,
        depth=3,
        patch_size=8,
        upsampler=UpsamplerKind.TRILINEAR,
        gate="none",
        decoder_block="basic",
    )
    model = build_model(config)
    path = tmp_path / "checkpoint.vskp"
    save_checkpoint(
        Checkpoint(model.state_dict(), AdamWState(), ScheduleState(), config.to_dict()),
        path,
    )
    return path


def run(parser, argv):
    return main(parser.parse_args(argv))


def test_cli_parser(parser):

    # volseg-cli gradcheck
    args = parser.parse_args(["gradcheck"])

    assert args.command == "gradcheck"
    assert args.module == "all"
    assert args.threshold == 1e-4
    assert args.eps == 1e-6
    assert args.max_elements is None
    assert args.loglevel is None

    # volseg-cli gradcheck --module dsa --debug
    args = parser.parse_args(["gradcheck", "--module", "dsa", "--debug"])
    assert args.module == "dsa"
    assert args.loglevel == logging.DEBUG

    # volseg-cli train --out-dir run -v --set model.depth=3 --set train.seed=2
    args = parser.parse_args(
        [
            "train",
            "--out-dir",
            "run",
            "-v",
            "--set",
            "model.depth=3",
            "--set",
            "train.seed=2",
        ]
    )
    assert args.loglevel == logging.INFO
    assert args.overrides == ["model.depth=3", "train.seed=2"]
    assert args.resume is False

    # volseg-cli bench --op conv3d --size 1,8,8,8 --timeout none
    args = parser.parse_args(
        ["bench", "--op", "conv3d", "--size", "1,8,8,8", "--timeout", "none"]
    )
    assert args.size == (1, 8, 8, 8)
    assert args.timeout is None

    args = parser.parse_args(["bench", "--op", "conv3d", "--timeout", "2.5"])
    assert args.size == (8, 32, 32, 32)
    assert args.timeout == 2.5


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["gradcheck", "--module", "conv3d"],
        ["train"],
        ["eval", "--checkpoint", "c.vskp", "--report", "r.csv"],
        [
            "eval",
            "--checkpoint",
            "c.vskp",
            "--report",
            "r.csv",
            "--data-dir",
            "data",
            "--phantom-seed",
            "1",
        ],
        ["bench", "--op", "conv3d", "--size", "8,32,32"],
        ["bench", "--op", "conv3d", "--size", "8,32,,32"],
        ["bench", "--op", "conv3d", "--size", "0,32,32,32"],
        ["bench", "--op", "conv3d", "--timeout", "-1"],
        ["ablate", "--axis", "loss", "--report", "a.csv"],
    ],
)
def test_cli_usage_errors(parser, argv):
    with pytest.raises(SystemExit):
        parser.parse_args(argv)


def test_cli_run_config(parser, tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(SMALL_RUN)

    args = parser.parse_args(
        [
            "train",
            "--out-dir",
            "run",
            "--config",
            str(path),
            "--set",
            "model.base_channels=4",
            "--epochs",
            "3",
            "--seed",
            "9",
        ]
    )
    config = get_run_config(args)

    assert config.model.base_channels == 4
    assert config.model.depth == 3
    assert config.train.epochs == 3
    assert config.train.e_max == 3
    assert config.train.seed == 9
    assert config.data.extent == (32, 32, 32)


@pytest.mark.parametrize(
    "override", ["model.depth", "depth=3", "model.width=3", "loss.weight=1"]
)
def test_cli_invalid_override(parser, override):
    args = parser.parse_args(["train", "--out-dir", "run", "--set", override])

    with pytest.raises(ConfigError):
        get_run_config(args)


def test_cli_gradcheck(parser, capsys):
    assert run(parser, ["gradcheck", "--module", "scp_ag"]) == 0

    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 7
    assert all(line.startswith("PASS scp_ag ") for line in lines)


def test_cli_gradcheck_failure(parser, capsys, monkeypatch):
    backward = Linear.backward

    def wrong_backward(self, grad):
        grad_x, grad_w, grad_b = backward(self, grad)
        return grad_x, 2 * grad_w, grad_b

    monkeypatch.setattr(Linear, "backward", wrong_backward)

    assert run(parser, ["gradcheck", "--module", "scp_ag"]) == 1

    out = capsys.readouterr().out
    assert "FAIL scp_ag linear_chi " in out
    assert "PASS scp_ag conv_psi " in out


def test_cli_phantom_and_eval(parser, tmp_path, checkpoint_path, capsys):
    data_dir = tmp_path / "data"
    assert run(parser, ["phantom", "--out-dir", str(data_dir), "--extent", "32"]) == 0
    assert sorted(p.name for p in data_dir.iterdir()) == [
        "phantom000_image.vseg",
        "phantom000_labels.vseg",
        "phantom001_image.vseg",
        "phantom001_labels.vseg",
    ]

    samples = read_data_dir(data_dir)
    assert [volume_id for volume_id, _, _, _ in samples] == ["phantom000", "phantom001"]
    assert samples[0][1].shape == (1, 1, 32, 32, 32)
    assert samples[0][2].shape == (32, 32, 32)

    report = tmp_path / "metrics.csv"
    predictions = tmp_path / "pred"
    argv = [
        "eval",
        "--checkpoint",
        str(checkpoint_path),
        "--data-dir",
        str(data_dir),
        "--report",
        str(report),
        "--predictions-dir",
        str(predictions),
        "--overlap",
        "0",
    ]
    assert run(parser, argv) == 0

    out = capsys.readouterr().out
    assert "mean_dice 0.000000\n" in out
    assert "mean_hd95 nan\n" in out

    with open(report, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["volume_id", "class", "dice", "hd95"]
    assert len(rows) == 1 + 2 * 3 + 1
    assert rows[1] == ["phantom000", "1", "0.000000", "nan"]
    assert rows[-1][:2] == ["mean", "all"]

    pred = read_volume(predictions / "phantom000_pred.vseg")
    assert pred.kind is VolumeKind.LABELS
    assert pred.data.shape == (1, 32, 32, 32)
    assert not pred.data.any()


def test_cli_eval_on_phantoms(parser, tmp_path, checkpoint_path):
    config = tmp_path / "run.ini"
    config.write_text("[data]\nextent = 32\n")
    report = tmp_path / "metrics.csv"

    argv = [
        "eval",
        "--checkpoint",
        str(checkpoint_path),
        "--phantom-seed",
        "3",
        "--count",
        "1",
        "--config",
        str(config),
        "--report",
        str(report),
        "--overlap",
        "0",
    ]
    assert run(parser, argv) == 0

    with open(report, newline="") as f:
        assert [row[0] for row in csv.reader(f)][1:] == ["phantom000"] * 3 + ["mean"]


def test_cli_eval_errors(parser, tmp_path, checkpoint_path, capsys):
    report = str(tmp_path / "metrics.csv")

    missing = ["--checkpoint", str(tmp_path / "missing.vskp"), "--phantom-seed", "1"]
    assert run(parser, ["eval", *missing, "--report", report]) == 2

    empty = tmp_path / "empty"
    empty.mkdir()
    data = ["--checkpoint", str(checkpoint_path), "--data-dir", str(empty)]
    assert run(parser, ["eval", *data, "--report", report]) == 2

    (tmp_path / "bad.vskp").write_bytes(b"junk")
    bad = ["--checkpoint", str(tmp_path / "bad.vskp"), "--phantom-seed", "1"]
    assert run(parser, ["eval", *bad, "--report", report]) == 1

    assert capsys.readouterr().err.count("Error: ") == 3


def test_cli_config_error_exit_code(parser, tmp_path, capsys):
    config = tmp_path / "run.ini"
    config.write_text("[model]\nupsampler = nearest\n")

    argv = ["train", "--out-dir", str(tmp_path / "run"), "--config", str(config)]
    assert run(parser, argv) == 2

    assert "line 2" in capsys.readouterr().err


def test_cli_bench(parser, capsys):
    argv = ["bench", "--op", "trilinear_upsample", "--size", "1,4,4,4", "--reps", "1"]
    assert run(parser, argv) == 0

    out = capsys.readouterr().out
    assert out.startswith("trilinear_upsample size 1,4,4,4: ")
    assert "voxels/s" in out


@pytest.mark.slow
def test_cli_train_and_resume(parser, tmp_path, capsys):
    config = tmp_path / "run.ini"
    config.write_text(SMALL_RUN)
    out_dir = tmp_path / "run"
    argv = ["train", "--config", str(config), "--out-dir", str(out_dir)]

    assert run(parser, argv + ["--set", "train.e_max=2"]) == 0
    assert capsys.readouterr().out.startswith("epoch 0: loss ")
    assert (out_dir / "config.ini").exists()
    assert load_checkpoint(out_dir / "checkpoint.vskp").schedule.e_cur == 1

    assert run(parser, argv + ["--epochs", "2", "--resume"]) == 0
    assert capsys.readouterr().out.startswith("epoch 1: loss ")
    assert load_checkpoint(out_dir / "checkpoint.vskp").schedule.e_cur == 2


@pytest.mark.slow
def test_cli_ablate(parser, tmp_path, capsys):
    config = tmp_path / "run.ini"
    config.write_text(SMALL_RUN)
    report = tmp_path / "gate.csv"

    argv = [
        "ablate",
        "--axis",
        "gate",
        "--config",
        str(config),
        "--out-dir",
        str(tmp_path / "ablation"),
        "--report",
        str(report),
    ]
    assert run(parser, argv) == 0

    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in lines] == ["none", "attention_gate", "scp_ag"]
    with open(report, newline="") as f:
        assert len(list(csv.reader(f))) == 4


def test_cli_ep_version(script_runner):
    ret = script_runner.run(["volseg-cli", "--version"])

    assert ret.success

    assert ret.stdout == f"v{__version__}\n"
    assert ret.stderr == ""
