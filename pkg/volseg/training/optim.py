"""AdamW with decoupled weight decay."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

from ..autograd import Parameter
from ..exceptions import NonFiniteError

log = logging.getLogger(__name__)


@dataclass
class AdamWState:
    """Moments of every parameter, keyed by parameter name."""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """param -= lr·(m̂ / (√v̂ + ε) + weight_decay·param)

    :param betas: decay rates of the first and second moments
    :param eps: denominator floor ε
    :param weight_decay: decoupled decay factor
    """

    def __init__(
        self,
        params: Sequence[Tuple[str, Parameter]],
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 3e-5,
    ):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamWState()

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        optimizer_step(
            self.params, self.state, lr, self.weight_decay, self.betas, self.eps
        )


def optimizer_step(
    params: Sequence[Tuple[str, Parameter]],
    state: AdamWState,
    lr: float,
    weight_decay: float = 3e-5,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One AdamW update of every (name, parameter) pair from its ``grad``.

    Nothing is updated when any gradient holds a NaN or an infinity.
    """
    for name, p in params:
        if p.grad is None or p.grad.shape != p.shape:
            raise ValueError(f"Gradient of {name} does not match its value")
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"Non-finite gradient in parameter {name}", name=name)

    beta1, beta2 = betas
    state.step += 1
    correction1 = 1 - beta1**state.step
    correction2 = 1 - beta2**state.step

    for name, p in params:
        grad = p.grad
        assert grad is not None
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1 - beta1) * grad
        v *= beta2
        v += (1 - beta2) * grad * grad

        m_hat = m / correction1
        v_hat = v / correction2
        update = m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data
        p.data -= (lr * update).astype(p.dtype, copy=False)

    log.debug("AdamW step %d with lr=%.6g", state.step, lr)
