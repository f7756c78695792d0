import math
from dataclasses import dataclass

from ..exceptions import ConfigError


@dataclass
class ScheduleState:
    """Position in a warm-up + cosine annealing learning rate schedule."""

    e_cur: int = 0
    e_warmup: int = 50
    e_max: int = 1000
    l_initial: float = 3e-4

    def __post_init__(self):
        if not 0 <= self.e_cur <= self.e_max:
            raise ConfigError(
                f"Current epoch {self.e_cur} outside [0, {self.e_max}]"
            )
        if not 0 <= self.e_warmup < self.e_max:
            raise ConfigError(
                f"Warm-up epochs {self.e_warmup} must be below {self.e_max}"
            )

    def advance(self) -> None:
        self.e_cur = min(self.e_cur + 1, self.e_max)


def lr_at(state: ScheduleState) -> float:
    """Linear warm-up to ``l_initial``, then half a cosine down to 0 at ``e_max``."""
    if state.e_cur < state.e_warmup:
        return state.l_initial * state.e_cur / state.e_warmup
    progress = (state.e_cur - state.e_warmup) / (state.e_max - state.e_warmup)
    return state.l_initial * (1 + math.cos(math.pi * progress)) / 2
