import abc
import logging
from contextvars import ContextVar, Token
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import TapeError
from .tensor import Tensor, as_float_array

log = logging.getLogger(__name__)

_current_tape: ContextVar[Optional["Tape"]] = ContextVar(
    "volseg_current_tape", default=None
)


def current_tape() -> Optional["Tape"]:
    """Return the tape recording in the current context, if any."""
    return _current_tape.get()


class Function(abc.ABC):
    """Base class for differentiable operations.

    Subclasses implement :meth:`forward` on raw numpy arrays and
    :meth:`backward`, which receives the gradient of the loss with respect to
    the output and returns one gradient (or None) per input tensor.
    """

    def __init__(self, *inputs: Tensor):
        self.inputs: Tuple[Tensor, ...] = inputs

    @abc.abstractmethod
    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(
            "Any Function subclass must implement forward method"
        )  # pragma: no cover

    @abc.abstractmethod
    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError(
            "Any Function subclass must implement backward method"
        )  # pragma: no cover

    def needs_grad(self, index: int) -> bool:
        return self.inputs[index].requires_grad

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        """Run the forward pass and record it on the active tape.

        Nothing is recorded when no tape is active or when no input requires
        a gradient.
        """
        fn = cls(*inputs)
        out = Tensor(fn.forward(*(t.data for t in inputs), **kwargs))

        tape = _current_tape.get()
        if tape is not None and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            tape.record(fn, out)

        return out


class Tape:
    """Ordered record of the operations of one forward pass.

    Use it as a context manager; every :class:`Function` applied inside the
    ``with`` block is recorded. The recording order is a topological order,
    so :meth:`backward` simply walks the records in reverse.

    A tape can run backward once. Record a new tape for the next pass.

    :param dtype: the float dtype shared by every tensor of the tape
        (float32 for training, float64 for gradient checks)
    """

    def __init__(self, dtype: Any = np.float32):
        self.dtype = np.dtype(dtype)
        self._records: List[Tuple[Function, Tensor]] = []
        self._consumed = False
        self._token: Optional[Token] = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise TapeError("Tape is already active")
        self._token = _current_tape.set(self)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        assert self._token is not None
        _current_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._records)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def record(self, fn: Function, output: Tensor) -> None:
        if self._consumed:
            raise TapeError("Cannot record on a tape consumed by backward")

        if output.dtype != self.dtype:
            raise TapeError(
                f"{type(fn).__name__} produced {output.dtype} "
                f"on a {self.dtype} tape"
            )

        output._node = len(self._records)
        output._tape = self
        self._records.append((fn, output))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf tensor.

        :param loss: a scalar tensor recorded on this tape
        """
        if self._consumed:
            raise TapeError("Stale tape: backward was already called")

        if loss.size != 1:
            raise TapeError(f"Loss must be a scalar, got shape {loss.shape}")

        if loss._tape is not self or loss._node is None:
            raise TapeError("Loss was not recorded on this tape")

        self._consumed = True

        grads: Dict[int, np.ndarray] = {
            loss._node: np.ones(loss.shape, dtype=self.dtype)
        }

        log.debug("Running backward over %d records", len(self._records))

        for node in range(loss._node, -1, -1):
            grad = grads.pop(node, None)
            if grad is None:
                continue

            fn, _ = self._records[node]
            input_grads = fn.backward(grad)

            for inp, inp_grad in zip(fn.inputs, input_grads):
                if inp_grad is None or not inp.requires_grad:
                    continue

                inp_grad = as_float_array(inp_grad, self.dtype)
                if inp_grad.shape != inp.shape:
                    raise TapeError(
                        f"{type(fn).__name__} returned a gradient of shape "
                        f"{inp_grad.shape} for an input of shape {inp.shape}"
                    )

                if inp._tape is self and inp._node is not None:
                    if inp._node in grads:
                        grads[inp._node] = grads[inp._node] + inp_grad
                    else:
                        grads[inp._node] = inp_grad
                else:
                    inp.accumulate_grad(inp_grad)

        self._records.clear()
