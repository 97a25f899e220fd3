"""Tape-based reverse-mode automatic differentiation.

A :class:`Tensor` wraps a NumPy array.  Each differentiable operation
attaches an :class:`OpRecord` to its output: the record remembers the op
kind, the input tensors, a pure ``forward_fn`` that can recompute the output
from the inputs (used to verify replay determinism), and a ``backward_fn``
mapping the output gradient to per-input gradients.  Records carry a global
sequence number so the creation order of a graph can be reconstructed.

:func:`backward` walks the graph in reverse topological order and
*accumulates* into ``.grad`` — gradients from repeated calls add up until
explicitly zeroed, which is what optimizers expect.
"""

import itertools
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ArgumentError

_SEQ = itertools.count()
_GRAD_ENABLED = True


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class no_grad:
    """Context manager that disables graph recording (eval / inference)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class OpRecord:
    __slots__ = ("kind", "inputs", "forward_fn", "backward_fn", "seq")

    def __init__(self, kind: str, inputs: Sequence["Tensor"],
                 forward_fn: Callable[[], np.ndarray],
                 backward_fn: Callable[[np.ndarray], tuple]):
        self.kind = kind
        self.inputs = tuple(inputs)
        self.forward_fn = forward_fn
        self.backward_fn = backward_fn
        self.seq = next(_SEQ)


class Tensor:
    """N-d float array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "record", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.record: Optional[OpRecord] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{label})"


def apply_op(kind: str, inputs: Sequence[Tensor], out_data: np.ndarray,
             backward_fn, forward_fn) -> Tensor:
    """Wrap an op result, recording it on the tape when gradients are live."""
    needs = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        out.record = OpRecord(kind, inputs, forward_fn, backward_fn)
    return out


def _topo_order(root: Tensor) -> list:
    """Tensors reachable from ``root`` through records, inputs-first."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node.record is not None:
            for inp in node.record.inputs:
                if id(inp) not in seen:
                    stack.append((inp, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad tensor."""
    if loss.data.size != 1:
        raise ArgumentError(
            f"backward: loss must be scalar, got shape {loss.data.shape}")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        rec = node.record
        if rec is None:
            continue
        in_grads = rec.backward_fn(g)
        if len(in_grads) != len(rec.inputs):
            raise ArgumentError(
                f"backward_fn of {rec.kind!r} returned {len(in_grads)} grads "
                f"for {len(rec.inputs)} inputs")
        for inp, ig in zip(rec.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if ig.shape != inp.data.shape:
                raise ArgumentError(
                    f"{rec.kind!r} backward produced grad shape {ig.shape} "
                    f"for input shape {inp.data.shape}")
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig


def collect_records(root: Tensor) -> list:
    """All OpRecords reachable from ``root``, in creation (seq) order."""
    nodes = [t for t in _topo_order(root) if t.record is not None]
    nodes.sort(key=lambda t: t.record.seq)
    return nodes


def replay_forward(root: Tensor) -> tuple:
    """Re-run every recorded forward in creation order; verify bit-exactness.

    Returns ``(n_replayed, mismatches)`` where ``mismatches`` lists the op
    kinds whose recomputed output differed from the stored value in any bit.
    """
    mismatches = []
    nodes = collect_records(root)
    for t in nodes:
        fresh = t.record.forward_fn()
        same = (fresh.dtype == t.data.dtype and fresh.shape == t.data.shape
                and fresh.tobytes() == t.data.tobytes())
        if not same:
            mismatches.append(t.record.kind)
    return len(nodes), mismatches
