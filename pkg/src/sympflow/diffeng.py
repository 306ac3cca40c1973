"""Differentiation engine.

Two layers:

* ``Dual2`` — scalar second-order truncated-Taylor numbers, used as an
  independent reference path for the vectorised kernels (and in tests).
* ``Var`` / ``TapeNode`` — a small reverse-mode tape over NumPy arrays. Graphs
  are built from a closed set of elementary operations plus custom nodes
  (the fused network kernels register themselves through :func:`make_op`).
  ``Var.backward`` runs the reverse sweep in reverse topological order,
  visiting each node exactly once.

The public operations :func:`grad_input`, :func:`time_partial` and
:func:`mixed_grad_time` evaluate exact input derivatives of any potential
object exposing the ``derivs`` protocol (see :mod:`sympflow.potential`);
:func:`param_gradient` differentiates an arbitrary scalar tape computation —
which may itself contain those derivative evaluations — with respect to all
network parameters.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

__all__ = [
    "Dual2",
    "Var",
    "TapeNode",
    "make_op",
    "grad_input",
    "time_partial",
    "mixed_grad_time",
    "param_gradient",
    "fd_gradient",
    "fd_jacobian",
]


# ---------------------------------------------------------------------------
# scalar truncated-Taylor numbers
# ---------------------------------------------------------------------------


@dataclass
class Dual2:
    """Value with first and second directional derivative along one direction.

    Arithmetic follows the truncated Taylor rules, e.g. for a product
    (a*b).d1 = a.d1*b.v + a.v*b.d1 and (a*b).d2 = a.d2*b.v + 2*a.d1*b.d1
    + a.v*b.d2.
    """

    v: float
    d1: float = 0.0
    d2: float = 0.0

    def _lift(self, other):
        if isinstance(other, Dual2):
            return other
        return Dual2(float(other))

    def __add__(self, other):
        o = self._lift(other)
        return Dual2(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return Dual2(self.v - o.v, self.d1 - o.d1, self.d2 - o.d2)

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __mul__(self, other):
        o = self._lift(other)
        return Dual2(
            self.v * o.v,
            self.d1 * o.v + self.v * o.d1,
            self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        )

    __rmul__ = __mul__

    def __neg__(self):
        return Dual2(-self.v, -self.d1, -self.d2)

    def _chain(self, f, f1, f2):
        return Dual2(f, f1 * self.d1, f2 * self.d1 * self.d1 + f1 * self.d2)

    def tanh(self):
        t = math.tanh(self.v)
        s1 = 1.0 - t * t
        return self._chain(t, s1, -2.0 * t * s1)

    def sin(self):
        return self._chain(math.sin(self.v), math.cos(self.v), -math.sin(self.v))


# ---------------------------------------------------------------------------
# reverse-mode tape over arrays
# ---------------------------------------------------------------------------


class TapeNode:
    """One recorded elementary operation: inputs, outputs, local backward."""

    __slots__ = ("inputs", "outputs", "backward")

    def __init__(self, inputs, outputs, backward):
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Var:
    """Array-valued tape variable."""

    __slots__ = ("value", "grad", "node")

    # keep NumPy from consuming Vars elementwise in mixed expressions
    __array_ufunc__ = None

    def __init__(self, value, node=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.node = node

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            _check_same_shape(self, other)
            return make_op(
                (self, other),
                (self.value + other.value,),
                lambda gs: (gs[0], gs[0]),
            )[0]
        c = np.asarray(other, dtype=float)
        return make_op((self,), (self.value + c,), lambda gs: (_unbroadcast(gs[0], self.shape),))[0]

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Var):
            _check_same_shape(self, other)
            return make_op(
                (self, other),
                (self.value - other.value,),
                lambda gs: (gs[0], -gs[0]),
            )[0]
        c = np.asarray(other, dtype=float)
        return make_op((self,), (self.value - c,), lambda gs: (_unbroadcast(gs[0], self.shape),))[0]

    def __rsub__(self, other):
        c = np.asarray(other, dtype=float)
        return make_op((self,), (c - self.value,), lambda gs: (_unbroadcast(-gs[0], self.shape),))[0]

    def __mul__(self, other):
        if isinstance(other, Var):
            _check_same_shape(self, other)
            a, b = self.value, other.value
            return make_op(
                (self, other),
                (a * b,),
                lambda gs: (gs[0] * b, gs[0] * a),
            )[0]
        c = np.asarray(other, dtype=float)
        return make_op((self,), (self.value * c,), lambda gs: (_unbroadcast(gs[0] * c, self.shape),))[0]

    __rmul__ = __mul__

    def __neg__(self):
        return make_op((self,), (-self.value,), lambda gs: (-gs[0],))[0]

    def __getitem__(self, key):
        val = self.value[key]
        shape = self.shape

        def bw(gs):
            out = np.zeros(shape)
            out[key] = gs[0]
            return (out,)

        return make_op((self,), (val,), bw)[0]

    # -- reverse sweep ------------------------------------------------------

    def backward(self, seed=None):
        """Accumulate gradients of self into every upstream Var.grad."""
        self.grad = np.ones_like(self.value) if seed is None else np.asarray(seed, float)
        if self.node is None:
            return
        order = []
        seen = set()
        stack = [(self.node, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for v in node.inputs:
                if v.node is not None and id(v.node) not in seen:
                    stack.append((v.node, False))
        for node in reversed(order):
            outs = [o.grad for o in node.outputs]
            if all(g is None for g in outs):
                continue
            ins = node.backward(outs)
            for v, g in zip(node.inputs, ins):
                if g is None:
                    continue
                v.grad = g if v.grad is None else v.grad + g


def _check_same_shape(a, b):
    if a.value.shape != b.value.shape:
        raise ValueError(f"shape mismatch {a.value.shape} vs {b.value.shape}")


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def make_op(inputs, values, backward):
    """Record one operation and return its output Vars.

    ``backward(out_grads) -> in_grads`` maps output adjoints (entries may be
    None) to input adjoints aligned with ``inputs`` (None allowed).
    """
    outs = tuple(Var(v) for v in values)
    node = TapeNode(tuple(inputs), outs, backward)
    for o in outs:
        o.node = node
    return outs


# -- reductions / reshaping -------------------------------------------------


def vsum(x, axis=None):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis)
    val = x.value.sum(axis=axis)
    shape = x.shape

    def bw(gs):
        g = gs[0]
        if axis is None:
            return (np.full(shape, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make_op((x,), (val,), bw)[0]


def square(x):
    if not isinstance(x, Var):
        return np.square(x)
    v = x.value
    return make_op((x,), (v * v,), lambda gs: (2.0 * gs[0] * v,))[0]


def concat_cols(parts):
    if not any(isinstance(p, Var) for p in parts):
        return np.concatenate(parts, axis=1)
    vals = [p.value if isinstance(p, Var) else np.asarray(p, float) for p in parts]
    widths = [v.shape[1] for v in vals]
    var_parts = [(i, p) for i, p in enumerate(parts) if isinstance(p, Var)]
    offs = np.concatenate([[0], np.cumsum(widths)])

    def bw(gs):
        g = gs[0]
        return tuple(g[:, offs[i] : offs[i + 1]] for i, _ in var_parts)

    return make_op(
        tuple(p for _, p in var_parts), (np.concatenate(vals, axis=1),), bw
    )[0]


def concat_rows(parts):
    if not any(isinstance(p, Var) for p in parts):
        return np.concatenate(parts, axis=0)
    vals = [p.value if isinstance(p, Var) else np.asarray(p, float) for p in parts]
    heights = [v.shape[0] for v in vals]
    var_parts = [(i, p) for i, p in enumerate(parts) if isinstance(p, Var)]
    offs = np.concatenate([[0], np.cumsum(heights)])

    def bw(gs):
        g = gs[0]
        return tuple(g[offs[i] : offs[i + 1]] for i, _ in var_parts)

    return make_op(
        tuple(p for _, p in var_parts), (np.concatenate(vals, axis=0),), bw
    )[0]


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# public derivative operations
# ---------------------------------------------------------------------------


def _single_point(V, t, z):
    z = np.asarray(z, dtype=float).reshape(1, -1)
    if z.shape[1] != V.dim:
        raise ValueError(f"expected input of dimension {V.dim}, got {z.shape[1]}")
    return float(t), z


def grad_input(V, t, z):
    """Exact gradient of V(t, .) with respect to z, as a d-vector."""
    t, Z = _single_point(V, t, z)
    _, G, _, _ = V.derivs(t, Z)
    return G[0, 1:].copy()


def time_partial(V, t, z):
    """Exact partial derivative of V with respect to t."""
    t, Z = _single_point(V, t, z)
    _, G, _, _ = V.derivs(t, Z)
    return float(G[0, 0])


def mixed_grad_time(V, t, z):
    """Exact d/dt of grad_z V(t, z), as a d-vector."""
    t, Z = _single_point(V, t, z)
    _, _, _, Gdot = V.derivs(t, Z, wt=1.0, Wz=np.zeros_like(Z))
    return Gdot[0, 1:].copy()


def param_gradient(loss_builder, *models):
    """Gradient of a scalar tape computation with respect to model parameters.

    ``loss_builder`` is a zero-argument callable returning a scalar Var whose
    graph may include derivative evaluations of the given models' networks.
    Returns the concatenated gradient aligned with each model's flat
    parameter layout.
    """
    for m in models:
        for p in m.param_vars():
            p.grad = None
    loss = loss_builder()
    if not isinstance(loss, Var) or loss.value.ndim != 0:
        raise ValueError("loss_builder must return a scalar Var")
    if not np.isfinite(loss.value):
        raise NumericalError("loss evaluation produced a non-finite value")
    loss.backward()
    chunks = []
    for m in models:
        for i, p in enumerate(m.param_vars()):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise NumericalError(
                    f"non-finite gradient in parameter block {i} of {type(m).__name__}"
                )
            chunks.append(np.ravel(g))
    return np.concatenate(chunks) if chunks else np.zeros(0)


# ---------------------------------------------------------------------------
# finite-difference oracles
# ---------------------------------------------------------------------------


def fd_gradient(f, x, step=1e-5):
    """Central-difference gradient of scalar f at 1-D point x."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def fd_jacobian(f, x, step=1e-5):
    """Central-difference Jacobian of vector f at 1-D point x."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * step))
    return np.stack(cols, axis=1)
