"""Parametrised scalar potentials V(t, z) and the unconstrained baseline net.

A "potential" is anything exposing the derivative protocol used by the flow
layers and the loss graphs:

    derivs(t, Z, wt=None, Wz=None, traced=False)
        -> (V, G, Vdot, Gdot)

where Z is a (B, d) batch, t is a scalar or (B,) array of times, and
(wt, Wz) is an optional input tangent (time component, z components). G holds
the full input gradient with the time column first, shape (B, 1+d); Gdot is
the Hessian-vector product along the tangent with the same layout. With
``traced=True`` the outputs are tape Vars and the evaluation participates in
reverse-mode parameter differentiation.

``PotentialNet`` implements the protocol with the fused MLP kernels;
``QuadraticPotential`` is a one-parameter analytic potential (a * t * |z|^2/2)
used for hand-checkable tests and diagnostics.
"""

import numpy as np

from . import kernels
from .diffeng import Var, make_op
from .errors import NumericalError

__all__ = [
    "PotentialNet",
    "QuadraticPotential",
    "BaselineFlowNet",
    "init_potential",
    "eval_potential",
    "eval_baseline",
    "ACTIVATIONS",
]

ACTIVATIONS = dict(kernels.ACTIVATION_CODES)


def _init_params(sizes, seed):
    """Per layer, W and b uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    rng = np.random.default_rng(seed)
    Ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        Ws.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        bs.append(rng.uniform(-bound, bound, size=n_out))
    return Ws, bs


class _Mlp:
    """Dense MLP parameter container with tape-leaf parameters."""

    def __init__(self, sizes, activation="tanh", seed=None):
        if len(sizes) < 2 or any(int(s) <= 0 for s in sizes):
            raise ValueError("layer sizes must be positive (input and output included)")
        if activation not in ACTIVATIONS:
            raise ValueError(
                f"unknown activation '{activation}' (available: {', '.join(sorted(ACTIVATIONS))})"
            )
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.act_code = ACTIVATIONS[activation]
        Ws, bs = _init_params(self.sizes, seed)
        self.Wv = [Var(W) for W in Ws]
        self.bv = [Var(b) for b in bs]

    @property
    def widths(self):
        return list(self.sizes[1:-1])

    @property
    def n_params(self):
        return sum(p.value.size for p in self.param_vars())

    def param_vars(self):
        return [*self.Wv, *self.bv]

    def arrays(self):
        return [w.value for w in self.Wv], [b.value for b in self.bv]

    def get_flat(self):
        return np.concatenate([p.value.ravel() for p in self.param_vars()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        off = 0
        for p in self.param_vars():
            n = p.value.size
            p.value[...] = flat[off : off + n].reshape(p.value.shape)
            off += n

    def zero_grad(self):
        for p in self.param_vars():
            p.grad = None

    def _check_finite(self):
        for p in self.param_vars():
            if not np.all(np.isfinite(p.value)):
                raise NumericalError("network parameters contain non-finite values")


def _time_col(t, B):
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return np.full((B, 1), float(t))
    if t.shape != (B,):
        raise ValueError(f"time batch shape {t.shape} does not match batch size {B}")
    return t.reshape(B, 1)


class PotentialNet(_Mlp):
    """Scalar MLP potential of (t, z), time prepended to the input."""

    def __init__(self, dim, widths, activation="tanh", seed=None):
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError("potential input dimension must be >= 1")
        super().__init__([self.dim + 1, *widths, 1], activation, seed)

    def derivs(self, t, Z, wt=None, Wz=None, traced=False):
        z_var = isinstance(Z, Var)
        wz_var = isinstance(Wz, Var)
        Zv = Z.value if z_var else np.asarray(Z, dtype=float)
        if Zv.ndim != 2 or Zv.shape[1] != self.dim:
            raise ValueError(f"expected (B, {self.dim}) inputs, got {Zv.shape}")
        B = Zv.shape[0]
        U = np.ascontiguousarray(np.concatenate([_time_col(t, B), Zv], axis=1))

        tang = wt is not None or Wz is not None
        T = None
        if tang:
            Wzv = Wz.value if wz_var else Wz
            Wzv = np.zeros_like(Zv) if Wzv is None else np.asarray(Wzv, dtype=float)
            wt_col = np.zeros((B, 1)) if wt is None else _time_col(wt, B)
            T = np.ascontiguousarray(np.concatenate([wt_col, Wzv], axis=1))

        Ws, bs = self.arrays()
        V, G, Vdot, Gdot, cache = kernels.potential_fused(
            Ws, bs, self.act_code, U, T, need_cache=traced
        )
        if not traced:
            return V, G, Vdot, Gdot

        inputs = list(self.param_vars())
        if z_var:
            inputs.append(Z)
        if wz_var:
            inputs.append(Wz)
        n_w = len(self.Wv)
        backward_fn = kernels.potential_fused_backward

        def bw(out_grads):
            if tang:
                vb, gb, vdb, gdb = out_grads
            else:
                vb, gb = out_grads
                vdb = gdb = None
            dWs, dbs, Ubar, Tbar = backward_fn(cache, vb, gb, vdb, gdb)
            res = [*dWs, *dbs]
            if z_var:
                res.append(None if Ubar is None else Ubar[:, 1:])
            if wz_var:
                res.append(None if Tbar is None else Tbar[:, 1:])
            return res

        if tang:
            outs = make_op(inputs, (V, G, Vdot, Gdot), bw)
            return outs
        out_v, out_g = make_op(inputs, (V, G), bw)
        return out_v, out_g, None, None


class QuadraticPotential:
    """Analytic test potential V(t, z) = a * t * |z|^2 / 2 with one parameter."""

    def __init__(self, dim, scale=1.0):
        self.dim = int(dim)
        self.a = Var(np.asarray(float(scale)))

    @property
    def n_params(self):
        return 1

    def param_vars(self):
        return [self.a]

    def get_flat(self):
        return np.array([float(self.a.value)])

    def set_flat(self, flat):
        self.a.value[...] = np.asarray(flat, dtype=float).reshape(())

    def zero_grad(self):
        self.a.grad = None

    def derivs(self, t, Z, wt=None, Wz=None, traced=False):
        z_var = isinstance(Z, Var)
        wz_var = isinstance(Wz, Var)
        Zv = Z.value if z_var else np.asarray(Z, dtype=float)
        B = Zv.shape[0]
        tc = _time_col(t, B)[:, 0]
        a = float(self.a.value)

        r = 0.5 * np.sum(Zv * Zv, axis=1)
        V = a * tc * r
        G = np.concatenate([(a * r)[:, None], a * tc[:, None] * Zv], axis=1)

        tang = wt is not None or Wz is not None
        Vdot = Gdot = None
        wtc = Wzv = None
        if tang:
            Wzv = Wz.value if wz_var else Wz
            Wzv = np.zeros_like(Zv) if Wzv is None else np.asarray(Wzv, dtype=float)
            wtc = np.zeros(B) if wt is None else _time_col(wt, B)[:, 0]
            zw = np.sum(Zv * Wzv, axis=1)
            Vdot = a * wtc * r + a * tc * zw
            Gdot = np.concatenate(
                [(a * zw)[:, None], a * wtc[:, None] * Zv + a * tc[:, None] * Wzv],
                axis=1,
            )
        if not traced:
            return V, G, Vdot, Gdot

        inputs = [self.a]
        if z_var:
            inputs.append(Z)
        if wz_var:
            inputs.append(Wz)

        def bw(out_grads):
            if tang:
                vb, gb, vdb, gdb = out_grads
            else:
                vb, gb = out_grads
                vdb = gdb = None
            da = 0.0
            dZ = np.zeros_like(Zv)
            dWz = np.zeros_like(Zv)
            if vb is not None:
                da += np.sum(vb * tc * r)
                dZ += (vb * tc)[:, None] * (a * Zv)
            if gb is not None:
                da += np.sum(gb[:, 0] * r) + np.sum(gb[:, 1:] * tc[:, None] * Zv)
                dZ += gb[:, 0][:, None] * (a * Zv) + gb[:, 1:] * (a * tc[:, None])
            if vdb is not None:
                zw = np.sum(Zv * Wzv, axis=1)
                da += np.sum(vdb * (wtc * r + tc * zw))
                dZ += (vdb * a)[:, None] * (wtc[:, None] * Zv + tc[:, None] * Wzv)
                dWz += (vdb * a * tc)[:, None] * Zv
            if gdb is not None:
                da += np.sum(gdb[:, 0] * np.sum(Zv * Wzv, axis=1))
                da += np.sum(gdb[:, 1:] * (wtc[:, None] * Zv + tc[:, None] * Wzv))
                dZ += (gdb[:, 0] * a)[:, None] * Wzv + gdb[:, 1:] * (a * wtc[:, None])
                dWz += (gdb[:, 0] * a)[:, None] * Zv + gdb[:, 1:] * (a * tc[:, None])
            res = [np.asarray(da)]
            if z_var:
                res.append(dZ)
            if wz_var:
                res.append(dWz)
            return res

        if tang:
            return make_op(inputs, (V, G, Vdot, Gdot), bw)
        out_v, out_g = make_op(inputs, (V, G), bw)
        return out_v, out_g, None, None


def init_potential(dim, widths, activation="tanh", seed=0):
    """Freshly initialised scalar potential network; deterministic per seed."""
    widths = list(widths)
    if not widths:
        raise ValueError("widths must be non-empty")
    if any(int(w) <= 0 for w in widths):
        raise ValueError("hidden widths must be positive")
    return PotentialNet(dim, widths, activation, seed)


def eval_potential(V, t, z):
    """Forward value V(t, z) at a single point."""
    V._check_finite()
    z = np.asarray(z, dtype=float).reshape(1, -1)
    Ws, bs = V.arrays()
    U = np.concatenate([np.full((1, 1), float(t)), z], axis=1)
    return float(kernels.mlp_forward(Ws, bs, V.act_code, U)[0, 0])


class BaselineFlowNet(_Mlp):
    """Unconstrained flow-map MLP, structurally the identity at t = 0.

    The map is x + t * N(t, x) with N the raw network output, so no penalty is
    needed to pin the initial condition.
    """

    def __init__(self, dim, widths, activation="tanh", seed=None, dt=1.0):
        self.dim = int(dim)
        self.dt = float(dt)
        super().__init__([2 * self.dim + 1, *widths, 2 * self.dim], activation, seed)

    def flow(self, t, X):
        """Mapped states at time(s) t; X is (B, 2d)."""
        X = np.asarray(X, dtype=float)
        B = X.shape[0]
        tc = _time_col(t, B)
        U = np.concatenate([tc, X], axis=1)
        Ws, bs = self.arrays()
        return X + tc * kernels.mlp_forward(Ws, bs, self.act_code, U)

    def flow_and_rate(self, t, X, traced=False):
        """(psi, d psi/dt) at fixed initial states X; Vars when traced."""
        X = np.asarray(X, dtype=float)
        B = X.shape[0]
        tc = _time_col(t, B)
        U = np.ascontiguousarray(np.concatenate([tc, X], axis=1))
        T = np.zeros_like(U)
        T[:, 0] = 1.0
        Ws, bs = self.arrays()
        Y, Ydot, cache = kernels.mlp_jvp(Ws, bs, self.act_code, U, T, need_cache=traced)
        if not traced:
            return X + tc * Y, Y + tc * Ydot

        backward_fn = kernels.mlp_jvp_backward

        def bw(out_grads):
            yb, ydb = out_grads
            dWs, dbs, _, _ = backward_fn(cache, yb, ydb)
            return [*dWs, *dbs]

        y_var, ydot_var = make_op(self.param_vars(), (Y, Ydot), bw)
        psi = y_var * tc + X
        rate = y_var + ydot_var * tc
        return psi, rate


def eval_baseline(net, t, x):
    """Baseline map at a single phase point (array in, array out)."""
    from .systems import PhasePoint

    pt = isinstance(x, PhasePoint)
    xv = x.as_array() if pt else np.asarray(x, dtype=float)
    if xv.shape != (2 * net.dim,):
        raise ValueError(f"expected state of length {2 * net.dim}, got {xv.shape}")
    out = net.flow(float(t), xv.reshape(1, -1))[0]
    return PhasePoint.from_array(out) if pt else out


# ---------------------------------------------------------------------------
# checkpoint layer documents (shared by the model-level serialisers)
# ---------------------------------------------------------------------------


def net_to_doc(net):
    """Layer-wise flat parameter document (row-major 64-bit floats)."""
    Ws, bs = net.arrays()
    return {
        "layers": [
            {"weights": W.ravel().tolist(), "bias": b.tolist()}
            for W, b in zip(Ws, bs)
        ]
    }


def net_from_doc(net, doc):
    """Load parameters from a layer document into an existing network."""
    layers = doc["layers"]
    Ws, bs = net.arrays()
    if len(layers) != len(Ws):
        raise ValueError("checkpoint layer count does not match architecture")
    for W, b, layer in zip(Ws, bs, layers):
        w_flat = np.asarray(layer["weights"], dtype=float)
        b_flat = np.asarray(layer["bias"], dtype=float)
        if w_flat.size != W.size or b_flat.size != b.size:
            raise ValueError("checkpoint layer shape does not match architecture")
        W[...] = w_flat.reshape(W.shape)
        b[...] = b_flat
    return net
