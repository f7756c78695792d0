"""Gradient checks of the decoder building blocks and of the training loss.

Every case builds a small float64 instance from a seed, reduces its output
to a scalar with a fixed random projection and compares the tape gradients
with central differences. Errors are reported per parameter group, the
first component of the parameter name (``conv_chi.weight`` belongs to
``conv_chi``).

The default step is 1e-6, smaller than the usual 1e-4: the onsampling gather
is piecewise constant in its coordinates and the blocks use relu, and a
smaller step keeps a perturbation from straddling one of these kinks. Smooth
cases such as the losses pass at 1e-4 as well.
"""

import enum
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from .autograd import Parameter, Tensor, finite_difference_check
from .decoder.blocks import DsaBlock
from .decoder.gates import ScpAg
from .decoder.onsampling import OffsetGradient, Onsampling, OnsamplingConfig
from .losses import LabelVolume, SupervisionPyramid, total_loss

log = logging.getLogger(__name__)

GRADCHECK_THRESHOLD = 1e-4
GRADCHECK_EPS = 1e-6


class GradcheckTarget(str, enum.Enum):
    ONSAMPLING = "onsampling"
    SCP_AG = "scp_ag"
    DSA = "dsa"
    LOSSES = "losses"
    ALL = "all"


@dataclass
class GradcheckCase:
    name: str
    loss: Callable[[], Tensor]
    params: Dict[str, Tensor]


@dataclass
class GroupResult:
    case: str
    group: str
    max_rel_error: float

    def passed(self, threshold: float = GRADCHECK_THRESHOLD) -> bool:
        return self.max_rel_error < threshold


def _randomize(param: Parameter, rng: np.random.Generator, std: float) -> None:
    param.assign(std * rng.standard_normal(param.shape))


def _input(rng: np.random.Generator, shape, name: str) -> Tensor:
    return Tensor(rng.standard_normal(shape), dtype=np.float64, name=name)


def _projected(
    forward: Callable[[], Tensor], shape, rng: np.random.Generator
) -> Callable[[], Tensor]:
    projection = Tensor(rng.standard_normal(shape), dtype=np.float64)
    return lambda: (forward() * projection).sum()


def onsampling_case(seed: int = 0) -> GradcheckCase:
    rng = np.random.default_rng(seed)
    # the straight-through coordinate gradient is an estimate, not a derivative
    config = OnsamplingConfig(in_channels=2, offset_gradient=OffsetGradient.NONE)
    module = Onsampling(rng, config)
    module.astype(np.float64)
    # non-zero offsets and weights move the sampling points off the base grid
    _randomize(module.conv2.weight, rng, 0.3)
    _randomize(module.encode.weight, rng, 0.1)

    x = _input(rng, (1, 2, 3, 3, 3), "input")
    loss = _projected(lambda: module(x), (1, 2, 6, 6, 6), rng)
    params = {"input": x, **dict(module.named_parameters())}
    return GradcheckCase("onsampling", loss, params)


def scp_ag_case(seed: int = 0) -> GradcheckCase:
    rng = np.random.default_rng(seed)
    gate = ScpAg(rng, 4)
    gate.astype(np.float64)
    chi = _input(rng, (1, 4, 4, 4, 4), "chi")
    lam = _input(rng, (1, 4, 4, 4, 4), "lambda")
    loss = _projected(lambda: gate(chi, lam), chi.shape, rng)
    return GradcheckCase(
        "scp_ag", loss, {"chi": chi, "lambda": lam, **dict(gate.named_parameters())}
    )


def dsa_case(seed: int = 0) -> GradcheckCase:
    rng = np.random.default_rng(seed)
    block = DsaBlock(rng, 4, 2)
    block.astype(np.float64)
    _randomize(block.deform.offset_predictor.weight, rng, 0.2)

    x = _input(rng, (1, 4, 5, 5, 5), "input")
    loss = _projected(lambda: block(x), (1, 2, 5, 5, 5), rng)
    return GradcheckCase("dsa", loss, {"input": x, **dict(block.named_parameters())})


def losses_case(seed: int = 0) -> GradcheckCase:
    rng = np.random.default_rng(seed)
    labels = LabelVolume(rng.integers(0, 3, size=(1, 8, 8, 8)), num_classes=3)
    logits: List[Tensor] = []
    for level in range(3):
        extent = 8 // 2**level
        logits.append(_input(rng, (1, 3, extent, extent, extent), f"level{level}"))

    def loss() -> Tensor:
        return total_loss(SupervisionPyramid.build(logits, labels), expected_levels=3)

    return GradcheckCase("losses", loss, {t.name or "": t for t in logits})


CASES: Dict[GradcheckTarget, Callable[[int], GradcheckCase]] = {
    GradcheckTarget.ONSAMPLING: onsampling_case,
    GradcheckTarget.SCP_AG: scp_ag_case,
    GradcheckTarget.DSA: dsa_case,
    GradcheckTarget.LOSSES: losses_case,
}


def group_errors(per_param: Dict[str, float]) -> Dict[str, float]:
    groups: Dict[str, float] = {}
    for name, error in per_param.items():
        group = name.split(".", 1)[0]
        groups[group] = max(groups.get(group, 0.0), error)
    return groups


def run_gradcheck(
    target: Union[GradcheckTarget, str] = GradcheckTarget.ALL,
    seed: int = 0,
    eps: float = GRADCHECK_EPS,
    max_elements: Optional[int] = None,
) -> List[GroupResult]:
    """Check one case, or every case for ``all``, and list the group errors."""
    target = GradcheckTarget(target)
    selected = list(CASES) if target is GradcheckTarget.ALL else [target]

    results = []
    for name in selected:
        case = CASES[name](seed)
        report = finite_difference_check(
            case.loss, case.params, eps=eps, max_elements=max_elements, seed=seed
        )
        log.info(
            "%s: %d elements checked, max relative error %.3g",
            case.name,
            report.checked,
            report.max_rel_error,
        )
        for group, error in group_errors(report.per_param).items():
            results.append(GroupResult(case.name, group, error))
    return results
