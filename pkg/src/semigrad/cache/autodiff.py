"""A small reverse-mode tape over numpy arrays.

Nodes are appended in evaluation order, so the tape is already a topological
order and the backward pass is a single reverse sweep. ``stop_gradient``
records a node whose value is its input but which passes nothing upstream.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Var:
    __slots__ = ("tape", "index", "value", "requires_grad", "kind")

    def __init__(self, tape, index, value, requires_grad, kind):
        self.tape = tape
        self.index = index
        self.value = value
        self.requires_grad = requires_grad
        self.kind = kind

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __repr__(self):
        return f"Var({self.kind}, shape={self.value.shape}, grad={self.requires_grad})"


class _Node:
    __slots__ = ("parents", "vjps", "forward")

    def __init__(self, parents, vjps, forward):
        self.parents = parents
        self.vjps = vjps
        self.forward = forward


class Tape:
    def __init__(self):
        self.vars: list[Var] = []
        self._nodes: list[_Node] = []
        self.output: Var | None = None
        self.params: list[Var] = []

    def __len__(self):
        return len(self.vars)

    def _record(self, value, parents, vjps, forward, kind) -> Var:
        req = any(p.requires_grad for p in parents)
        v = Var(self, len(self.vars), value, req, kind)
        self.vars.append(v)
        self._nodes.append(_Node(tuple(parents), tuple(vjps), forward))
        return v

    def _lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("variable belongs to a different tape")
            return x
        return self.constant(x)

    def leaf(self, value, requires_grad=True) -> Var:
        v = Var(self, len(self.vars), np.asarray(value, dtype=float), requires_grad, "leaf")
        self.vars.append(v)
        self._nodes.append(_Node((), (), None))
        return v

    def constant(self, value) -> Var:
        return self.leaf(value, requires_grad=False)

    def param(self, value) -> Var:
        v = self.leaf(value, requires_grad=True)
        self.params.append(v)
        return v

    def add(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        return self._record(a.value + b.value, (a, b),
                            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
                            np.add, "add")

    def sub(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        return self._record(a.value - b.value, (a, b),
                            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
                            np.subtract, "sub")

    def mul(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        return self._record(av * bv, (a, b),
                            (lambda g: _unbroadcast(g * bv, a.shape), lambda g: _unbroadcast(g * av, b.shape)),
                            np.multiply, "mul")

    def matmul(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        return self._record(av @ bv, (a, b), (lambda g: g @ bv.T, lambda g: av.T @ g),
                            np.matmul, "matmul")

    def relu(self, a) -> Var:
        a = self._lift(a)
        mask = a.value > 0.0
        return self._record(np.where(mask, a.value, 0.0), (a,), (lambda g: np.where(mask, g, 0.0),),
                            lambda x: np.where(x > 0.0, x, 0.0), "relu")

    def sum(self, a, axis=None) -> Var:
        a = self._lift(a)
        shape = a.shape

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, shape)
            return np.broadcast_to(np.expand_dims(g, axis), shape)

        return self._record(a.value.sum(axis=axis), (a,), (vjp,),
                            lambda x: x.sum(axis=axis), "sum")

    def reshape(self, a, shape) -> Var:
        a = self._lift(a)
        old = a.shape
        return self._record(a.value.reshape(shape), (a,), (lambda g: g.reshape(old),),
                            lambda x: x.reshape(shape), "reshape")

    def stop_gradient(self, a) -> Var:
        """Identity in the forward pass; contributes no gradient upstream."""
        a = self._lift(a)
        v = Var(self, len(self.vars), a.value, False, "stop_gradient")
        self.vars.append(v)
        self._nodes.append(_Node((a,), (None,), lambda x: x))
        return v

    def backward(self, output: Var, upstream=None, skip: Callable[[Var], bool] | None = None) -> list:
        """Reverse sweep from ``output``; returns per-node gradients (``None`` if untouched).

        ``skip`` masks nodes: a skipped node receives gradient but does not pass it on.
        """
        output = self._lift(output)
        grads: list = [None] * len(self.vars)
        grads[output.index] = (np.ones_like(output.value) if upstream is None
                               else np.broadcast_to(np.asarray(upstream, dtype=float), output.shape))
        for i in range(output.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self._nodes[i]
            if skip is not None and skip(self.vars[i]):
                continue
            for p, vjp in zip(node.parents, node.vjps):
                if vjp is None or not p.requires_grad:
                    continue
                gp = vjp(g)
                grads[p.index] = gp if grads[p.index] is None else grads[p.index] + gp
        return grads

    def grad(self, output: Var, wrt: Var, upstream=None):
        g = self.backward(output, upstream)[wrt.index]
        return np.zeros_like(wrt.value) if g is None else g

    def replay(self, leaves: dict[int, np.ndarray] | None = None) -> np.ndarray:
        """Re-evaluate every node from the recorded leaf values and return the output."""
        leaves = leaves or {}
        vals: list = [None] * len(self.vars)
        for i, (v, node) in enumerate(zip(self.vars, self._nodes)):
            if node.forward is None:
                vals[i] = leaves.get(i, v.value)
            else:
                vals[i] = node.forward(*(vals[p.index] for p in node.parents))
        return vals[self.output.index] if self.output is not None else vals[-1]


def stop_gradient(node: Var) -> Var:
    return node.tape.stop_gradient(node)
