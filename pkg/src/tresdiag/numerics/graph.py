"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Graph` is created fresh for every forward pass.  Parameters and
inputs are registered on it, every primitive applied to a graph-attached
tensor appends one node to the tape, and :func:`backward` sweeps the tape
in reverse.  Tensors that are not attached to any graph are constants and
operations on constants only are evaluated eagerly without recording.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import GraphLookupError, ShapeError


class Tensor:
    """Immutable float64 array, optionally produced by a recorded graph node.

    The link back to the graph is weak: the tape lives as long as whoever
    ran the forward pass keeps the :class:`Graph`, and tensors outliving it
    behave as constants.  This avoids tensor <-> graph reference cycles that
    would otherwise hold large activations until a cyclic GC pass.
    """

    __slots__ = ("data", "_graph", "name")

    def __init__(self, data, graph: Graph | None = None, name: str | None = None,
                 _owned: bool = False):
        if _owned and isinstance(data, np.ndarray) and data.dtype == np.float64:
            arr = data
        else:
            arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self._graph = weakref.ref(graph) if graph is not None else None
        self.name = name

    @property
    def graph(self) -> Graph | None:
        return self._graph() if self._graph is not None else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.ravel()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a single-element tensor", self.shape)
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Operator sugar; the implementations live in ops.py.
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import mul
        return mul(self, -1.0)


@dataclass
class Node:
    output: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


class Graph:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Tensor] = {}
        self._members: set[int] = set()

    def param(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        t = Tensor(value, graph=self, name=name)
        self.params[name] = t
        self._members.add(id(t))
        return t

    def input(self, value, name: str | None = None) -> Tensor:
        """Register a differentiable non-parameter leaf (e.g. a model input)."""
        t = Tensor(value, graph=self, name=name)
        self._members.add(id(t))
        return t

    def record(self, data: np.ndarray, inputs: Sequence[Tensor], vjp, op: str) -> Tensor:
        out = Tensor(data, graph=self, _owned=True)
        self.nodes.append(Node(out, tuple(inputs), vjp, op))
        self._members.add(id(out))
        return out

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._members

    def __len__(self) -> int:
        return len(self.nodes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap a primitive's result, recording it when any operand is on a graph."""
    graph = None
    for t in inputs:
        if t.graph is not None:
            if graph is not None and t.graph is not graph:
                raise ValueError(f"{op}: operands belong to different graphs")
            graph = t.graph
    if graph is None:
        return Tensor(data, _owned=True)
    return graph.record(data, inputs, vjp, op)


def backward(
    graph: Graph,
    output: Tensor,
    seed=None,
    wrt: Sequence[Tensor] = (),
) -> dict:
    """Reverse sweep from ``output``.

    Returns a dict mapping every parameter name on the graph to its gradient
    (zeros for parameters the output does not depend on).  Tensors passed in
    ``wrt`` get their gradients under the tensor object itself as key.
    """
    if output not in graph:
        raise GraphLookupError("output tensor was not produced on this graph")
    for t in wrt:
        if t not in graph:
            raise GraphLookupError(f"requested gradient of a tensor outside the graph: {t!r}")
    if seed is None:
        if output.data.size != 1:
            raise ShapeError("non-scalar output needs an explicit seed cotangent", output.shape)
        seed = np.ones_like(output.data)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.shape:
            raise ShapeError("seed cotangent must match output", seed.shape, output.shape)

    cot: dict[int, np.ndarray] = {id(output): seed}
    for node in reversed(graph.nodes):
        g = cot.get(id(node.output))
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or inp.graph is not graph:
                continue
            key = id(inp)
            if key in cot:
                cot[key] = cot[key] + gi
            else:
                cot[key] = gi

    grads: dict = {}
    for name, p in graph.params.items():
        g = cot.get(id(p))
        grads[name] = np.zeros(p.shape) if g is None else np.asarray(g).reshape(p.shape)
    for t in wrt:
        g = cot.get(id(t))
        grads[t] = np.zeros(t.shape) if g is None else np.asarray(g).reshape(t.shape)
    return grads
