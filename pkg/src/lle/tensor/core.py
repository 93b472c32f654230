"""Tensor value type, recording tape and reverse-mode gradient propagation."""
from __future__ import annotations

import contextvars
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float32

_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "lle_active_tape", default=None
)


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class NonFiniteError(ValueError):
    """Raised when a tensor holds NaN or Inf where finite values are required."""


class Tensor:
    """Dense float32 array with optional gradient tracking.

    Tensors produced by ops are treated as immutable. Leaf tensors with
    ``requires_grad`` accumulate gradients into ``.grad`` on backward.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self) -> "Tensor":
        if not np.isfinite(self.data).all():
            bad = int(np.size(self.data) - np.count_nonzero(np.isfinite(self.data)))
            label = f" '{self.name}'" if self.name else ""
            raise NonFiniteError(f"tensor{label} of shape {self.shape} has {bad} non-finite values")
        return self

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; the functions in ops carry the contracts
    def __add__(self, other):
        from . import ops
        return ops.add(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, -other)

    def __rsub__(self, other):
        from . import ops
        return ops.add_scalar(ops.scale(self, -1.0), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other) if isinstance(other, Tensor) else ops.scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other) if isinstance(other, Tensor) else ops.scale(self, 1.0 / other)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Node:
    """One recorded op: inputs, output and the rule mapping d(out) to d(inputs)."""

    __slots__ = ("op", "inputs", "output", "backward", "tape")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward: BackwardFn, tape: "Tape"):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.tape = tape


class Tape:
    """Ordered record of differentiable ops.

    Use as a context manager; ops executed while a tape is active and that
    touch a gradient-requiring tensor are appended in execution order, which
    is also a valid topological order. A tape may be re-entered.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._tokens: list[contextvars.Token] = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        for node in self.nodes:
            node.output._node = None
        self.nodes.clear()


def active_tape() -> Tape | None:
    return _active_tape.get()


def record(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Wrap ``out_data`` as a Tensor and record it on the active tape if needed."""
    out = Tensor(out_data)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        node = Node(op, inputs, out, backward, tape)
        out._node = node
        out.requires_grad = True
        tape.nodes.append(node)
    return out


def backward(output: Tensor) -> None:
    """Propagate d(output)/d(leaf) into every gradient-requiring leaf.

    Gradients accumulate: calling this twice without ``zero_grad`` adds the
    gradient a second time.
    """
    if output.size != 1 or output.data.ndim > 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    if output._node is None:
        if output.requires_grad:
            _accumulate_leaf(output, np.ones_like(output.data))
        return
    tape = output._node.tape
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                _accumulate_leaf(inp, gi)
            else:
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi


def _accumulate_leaf(leaf: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=DTYPE).reshape(leaf.shape)
    if leaf.grad is None:
        leaf.grad = g.copy()
    else:
        leaf.grad = leaf.grad + g


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


def dump(t: Tensor) -> str:
    """Debug text form: one shape line, then row-major values one per line."""
    head = "shape " + " ".join(str(d) for d in t.shape)
    body = "\n".join(f"{float(v):.9g}" for v in t.data.reshape(-1))
    return head + "\n" + body + "\n"


def parse_dump(text: str) -> Tensor:
    lines = text.strip().splitlines()
    if not lines or not lines[0].startswith("shape"):
        raise ValueError("missing shape line")
    shape = tuple(int(s) for s in lines[0].split()[1:])
    values = np.array([float(v) for v in lines[1:]], dtype=DTYPE)
    if values.size != int(np.prod(shape, dtype=np.int64)):
        raise ValueError(f"expected {int(np.prod(shape))} values for shape {shape}, got {values.size}")
    return Tensor(values.reshape(shape))
