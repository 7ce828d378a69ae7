"""Tensor type and the computation record used for reverse-mode differentiation.

Every primitive is a pair of plain functions ``forward(arrays, attrs) ->
(out, saved)`` and ``backward(grad, arrays, out, saved, attrs, needs) ->
grads``; ``needs[i]`` is False when input ``i`` needs no gradient.
While a :class:`Record` is active (``with Record() as rec: ...``) each
primitive application that touches a tracked tensor is appended to it, in
execution order, which is therefore a topological order.
"""
from __future__ import annotations

import contextvars
import weakref
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ..errors import DimensionError, NonFiniteError, StructureError

ForwardFn = Callable[[tuple, dict], tuple]
BackwardFn = Callable[[np.ndarray, tuple, np.ndarray, Any, dict, tuple], tuple]

_PRIMITIVES: dict[str, tuple[ForwardFn, BackwardFn]] = {}
_ACTIVE: contextvars.ContextVar["Record | None"] = contextvars.ContextVar("sgr_record", default=None)


def primitive(kind: str):
    """Register ``forward``/``backward`` functions under ``kind``."""

    def register(pair):
        _PRIMITIVES[kind] = pair
        return pair

    return register


class Tensor:
    """A dense real array that can take part in a recorded computation."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_record_ref", "_node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._record_ref = None
        self._node: int | None = None

    @property
    def _record(self) -> "Record | None":
        # weak, so a finished record and its saved arrays are freed by refcount
        return None if self._record_ref is None else self._record_ref()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not self.is_finite():
            bad = int(np.argmax(~np.isfinite(self.data).ravel()))
            raise NonFiniteError(f"{what} {self.name or ''} has a non-finite value at flat index {bad}")
        return self

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # Operator sugar; the functional forms live in ``ops``.
    def __add__(self, other):
        return apply("add", self, as_tensor(other, like=self))

    def __sub__(self, other):
        return apply("sub", self, as_tensor(other, like=self))

    def __mul__(self, other):
        if np.isscalar(other):
            return apply("scale", self, factor=float(other), offset=0.0)
        return apply("mul", self, as_tensor(other, like=self))

    __rmul__ = __mul__

    def __neg__(self):
        return apply("scale", self, factor=-1.0, offset=0.0)

    def __matmul__(self, other):
        return apply("matmul", self, as_tensor(other, like=self))


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if like is not None:
        arr = arr.astype(like.dtype, copy=False)
    return Tensor(arr)


@dataclass
class Entry:
    kind: str
    inputs: tuple[int, ...]
    output: int
    attrs: dict
    saved: Any = field(repr=False, default=None)


class Record:
    """Ordered log of primitive applications (the computation record).

    Node ids index ``self.tensors``. Leaves are tensors that were not produced
    inside this record (parameters, inputs, constants).
    """

    def __init__(self):
        self.entries: list[Entry] = []
        self.tensors: list[Tensor] = []
        self._leaf_ids: dict[int, int] = {}
        self._token = None

    def __enter__(self) -> "Record":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def node_of(self, t: Tensor) -> int:
        if t._record is self:
            return t._node
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = len(self.tensors)
            self.tensors.append(t)
            self._leaf_ids[id(t)] = nid
        return nid

    def tracks(self, t: Tensor) -> bool:
        return t._record is self or t.requires_grad

    def is_leaf(self, nid: int) -> bool:
        return self.tensors[nid]._record is not self

    def append(self, kind: str, inputs: tuple[Tensor, ...], out: Tensor, attrs: dict, saved) -> None:
        ids = tuple(self.node_of(t) for t in inputs)
        nid = len(self.tensors)
        self.tensors.append(out)
        out._record_ref, out._node = weakref.ref(self), nid
        self.entries.append(Entry(kind, ids, nid, attrs, saved))

    def replay(self) -> list[np.ndarray]:
        """Re-run every recorded primitive from the current leaf values.

        Returns the node values indexed by node id. Recorded tensors are not
        modified.
        """
        values: list[np.ndarray | None] = [None] * len(self.tensors)
        for nid, t in enumerate(self.tensors):
            if self.is_leaf(nid):
                values[nid] = t.data
        for e in self.entries:
            fwd, _ = _PRIMITIVES[e.kind]
            out, _ = fwd(tuple(values[i] for i in e.inputs), e.attrs)
            values[e.output] = out
        return values

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Propagate d(loss)/d(node) back to every leaf with ``requires_grad``.

        Leaf gradients are also stored on ``Tensor.grad`` (overwritten, not
        accumulated across calls).
        """
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar seed, got shape {loss.shape}")
        if loss._record is not self:
            raise StructureError("loss was not produced inside this record")
        grads: dict[int, np.ndarray] = {loss._node: np.ones_like(loss.data)}
        for e in reversed(self.entries):
            g = grads.pop(e.output, None)
            if g is None:
                continue
            _, bwd = _PRIMITIVES[e.kind]
            arrays = tuple(self.tensors[i].data for i in e.inputs)
            needs = tuple(self.tracks(self.tensors[i]) for i in e.inputs)
            in_grads = bwd(g, arrays, self.tensors[e.output].data, e.saved, e.attrs, needs)
            for nid, gi in zip(e.inputs, in_grads):
                if gi is None or not self.tracks(self.tensors[nid]):
                    continue
                if nid in grads:
                    grads[nid] = grads[nid] + gi
                else:
                    grads[nid] = gi
        out: dict[Tensor, np.ndarray] = {}
        for nid, t in enumerate(self.tensors):
            if t.requires_grad and self.is_leaf(nid):
                g = grads.get(nid)
                if g is None:
                    g = np.zeros_like(t.data)
                t.grad = g
                out[t] = g
        return out


def current_record() -> Record | None:
    return _ACTIVE.get()


def apply(kind: str, *inputs: Tensor, **attrs) -> Tensor:
    """Run primitive ``kind`` and log it to the active record if needed."""
    fwd, _ = _PRIMITIVES[kind]
    out, saved = fwd(tuple(t.data for t in inputs), attrs)
    result = Tensor(out)
    rec = _ACTIVE.get()
    if rec is not None and any(rec.tracks(t) for t in inputs):
        rec.append(kind, inputs, result, attrs, saved)
    return result


def backward(record: Record, loss: Tensor) -> dict[Tensor, np.ndarray]:
    return record.backward(loss)
