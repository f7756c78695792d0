import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from ..exceptions import NonDeterministicError, TapeError
from .tape import Tape
from .tensor import Tensor

log = logging.getLogger(__name__)

RELATIVE_FLOOR = 1e-8


@dataclass
class GradcheckReport:
    """Result of :func:`finite_difference_check`."""

    max_rel_error: float
    """Largest relative error over every checked element."""

    per_param: Dict[str, float] = field(default_factory=dict)
    """Largest relative error per parameter name."""

    checked: int = 0
    """Number of checked elements."""

    def passed(self, threshold: float) -> bool:
        return self.max_rel_error < threshold

    def failing(self, threshold: float) -> List[str]:
        return [name for name, err in self.per_param.items() if not err < threshold]


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), RELATIVE_FLOOR)


def _evaluate(f: Callable[[], Tensor]) -> float:
    return float(np.asarray(f().data, dtype=np.float64).reshape(-1)[0])


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Union[Sequence[Tensor], Mapping[str, Tensor]],
    eps: float = 1e-6,
    max_elements: Optional[int] = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare the tape gradients of a scalar function with central differences.

    For every checked element ``i`` of every parameter the analytic gradient is
    compared with ``(f(θ + eps·e_i) - f(θ - eps·e_i)) / (2·eps)`` and the
    relative error ``|a - n| / max(|a|, |n|, 1e-8)`` is reported.

    :param f: deterministic closure returning a scalar tensor; it is called
        once inside a float64 tape and then many times without a tape
    :param params: float64 leaf tensors (usually Parameters) the closure reads,
        or a mapping from display names to such tensors
    :param eps: perturbation step
    :param max_elements: check at most this many elements per parameter,
        chosen at random with ``seed``; all elements by default
    """
    if isinstance(params, Mapping):
        named = list(params.items())
    else:
        named = [(p.name or f"param{i}", p) for i, p in enumerate(params)]

    for name, p in named:
        if p.dtype != np.float64:
            raise TapeError(
                f"Gradient checks need float64 parameters, {name!r} is {p.dtype}"
            )

    first = _evaluate(f)
    second = _evaluate(f)
    if first != second:
        raise NonDeterministicError(
            f"Two forward passes disagree: {first!r} != {second!r}"
        )

    for _, p in named:
        p.requires_grad = True
        p.grad = np.zeros_like(p.data)

    with Tape(np.float64) as tape:
        loss = f()
    tape.backward(loss)

    rng = np.random.default_rng(seed)
    report = GradcheckReport(max_rel_error=0.0)

    for name, p in named:
        assert p.grad is not None
        analytic = p.grad.reshape(-1).copy()
        flat = p.data.reshape(-1)

        elements = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            elements = np.sort(rng.choice(flat.size, size=max_elements, replace=False))

        worst = 0.0
        for i in elements:
            original = flat[i]
            flat[i] = original + eps
            plus = _evaluate(f)
            flat[i] = original - eps
            minus = _evaluate(f)
            flat[i] = original

            numeric = (plus - minus) / (2 * eps)
            err = relative_error(float(analytic[i]), numeric)
            if err > worst:
                worst = err
            log.debug(
                "%s[%d]: analytic=%.12g numeric=%.12g rel=%.3g",
                name,
                i,
                analytic[i],
                numeric,
                err,
            )

        report.per_param[name] = worst
        report.checked += len(elements)
        report.max_rel_error = max(report.max_rel_error, worst)

    return report
