"""
Dense float64 tensors and the tape that records operations on them.

Every differentiable operation appends a `TapeEntry` to the tape active on the
current thread; `backward` walks that tape in exact reverse recording order.
"""

import threading
from collections.abc import Callable, Iterable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..utilities.errors import DimensionError
from ..utilities.logging import get_logger

logger = get_logger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A dense row-major float64 array that may carry a gradient buffer.

    Leaf tensors with `requires_grad=True` own a same-shape `grad` buffer that
    `backward` accumulates into. Tensors produced by recorded operations are
    non-leaf; they receive their gradient during `backward` for inspection.
    """

    def __init__(self, values: Any, requires_grad: bool = False, name: str | None = None):
        self.data: np.ndarray = np.array(values, dtype=np.float64)
        self.name = name
        self.grad: np.ndarray | None = None
        self._requires_grad = False
        self._tape: Tape | None = None
        self.requires_grad = requires_grad

    @property
    def requires_grad(self) -> bool:
        return self._requires_grad

    @requires_grad.setter
    def requires_grad(self, flag: bool) -> None:
        if not self.is_leaf:
            raise ValueError("requires_grad can only be toggled on leaf tensors")
        self._requires_grad = bool(flag)
        if self._requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
        else:
            self.grad = None

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _attach(self, tape: "Tape") -> None:
        self._tape = tape
        self._requires_grad = True

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operator sugar; the actual ops live in functional.
    def __add__(self, other: Any) -> "Tensor":
        from . import functional as F
        return F.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        from . import functional as F
        return F.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        from . import functional as F
        return F.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        from . import functional as F
        return F.mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        from . import functional as F
        return F.div(self, other)

    def __neg__(self) -> "Tensor":
        from . import functional as F
        return F.neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import functional as F
        return F.matmul(self, other)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of operations; usable as a context manager."""

    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []

    def record(self, entry: TapeEntry) -> None:
        self.entries.append(entry)

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()


_state = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack  # type: ignore[no-any-return]


def current_tape() -> Tape:
    """The innermost active tape of this thread, or the thread's default tape."""
    stack = _stack()
    if stack:
        return stack[-1]
    if not hasattr(_state, "default"):
        _state.default = Tape()
    return _state.default  # type: ignore[no-any-return]


def is_recording() -> bool:
    return bool(getattr(_state, "enabled", True))


@contextmanager
def no_grad() -> Iterator[None]:
    """Disables recording on the current thread."""
    previous = is_recording()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def record(op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: BackwardFn) -> Tensor:
    """Attaches `output` to the active tape when any input needs a gradient."""
    if is_recording() and any(t.requires_grad for t in inputs):
        tape = current_tape()
        output._attach(tape)
        tape.record(TapeEntry(op, tuple(inputs), output, backward_fn))
    return output


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulates d(loss)/d(leaf) into every reachable leaf's `grad`."""
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        logger.debug("backward called on a loss that does not require grad; nothing to do")
        return
    if loss.is_leaf:
        assert loss.grad is not None
        loss.grad += 1.0
        return

    tape = loss._tape
    assert tape is not None
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = pending.pop(id(entry.output), None)
        if g is None:
            continue
        entry.output.grad = g
        for inp, g_in in zip(entry.inputs, entry.backward(g)):
            if g_in is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                assert inp.grad is not None
                inp.grad += g_in
            elif id(inp) in pending:
                pending[id(inp)] = pending[id(inp)] + g_in
            else:
                pending[id(inp)] = g_in
    if not retain_graph:
        tape.clear()


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
