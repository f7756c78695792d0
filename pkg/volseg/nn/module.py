import abc
from typing import Any, Dict, Iterator, List, Tuple

import numpy as np

from ..autograd import Parameter, Tensor
from ..exceptions import CheckpointError


class Module(abc.ABC):
    """Base class for every layer holding Parameters.

    Parameters and sub-modules are discovered from instance attributes in
    assignment order, including lists of modules, so parameter names are
    stable dotted paths such as ``decoder.1.block.fuse.weight``.
    """

    @abc.abstractmethod
    def forward(self, *args: Any, **kwargs: Any) -> Tensor:
        raise NotImplementedError(
            "Any Module subclass must implement forward method"
        )  # pragma: no cover

    def __call__(self, *args: Any, **kwargs: Any) -> Tensor:
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{path}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{path}.{index}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{index}", item

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype: Any) -> "Module":
        """Convert every parameter to another float dtype, in place."""
        for p in self.parameters():
            p.astype(dtype)
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Copy arrays into the parameters; names and shapes must match exactly."""
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise CheckpointError(
                f"State mismatch: missing={missing} unexpected={unexpected}"
            )
        for name, p in own.items():
            value = state[name]
            if value.shape != p.shape:
                raise CheckpointError(
                    f"Shape mismatch for {name}: {value.shape} != {p.shape}"
                )
            p.data = np.array(value, copy=True, order="C")
            p.zero_grad()
