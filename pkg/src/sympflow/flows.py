"""Symplectic flow-map model: exact-flow layers, composition, extraction of
the generating time-dependent Hamiltonian, and long-horizon rollout.

A position layer with potential V maps (q, p) to
    (q, p - (grad_q V(t, q) - grad_q V(0, q)))
and a momentum layer maps (q, p) to
    (q + (grad_p V(t, p) - grad_p V(0, p)), p).
Each is the exact time-t flow (from time 0) of a Hamiltonian that depends on
only one of the two coordinates, hence an exact shear: symplectic, identity
at t = 0, and invertible in closed form. The model composes L
(position, momentum) pairs, position sublayer first.

Because every sublayer is an exact flow, the whole composition is itself the
exact flow of a time-dependent Hamiltonian, assembled pairwise from
    h_i(t, q, p) = dV_m^i/dt (t, p) + dV_p^i/dt (t, q - shift_m^i(t, p))
by aggregating from the last pair to the first while peeling layers off with
their closed-form inverses (:func:`network_hamiltonian`).
"""

import json
import os
import tempfile

import numpy as np

from . import diffeng
from .diffeng import concat_rows, value_of
from .errors import NumericalError
from .potential import BaselineFlowNet, PotentialNet, net_from_doc, net_to_doc
from .systems import PhasePoint

__all__ = [
    "FlowLayer",
    "SympFlowModel",
    "apply_position_flow",
    "apply_momentum_flow",
    "invert_layer",
    "invert",
    "forward",
    "forward_batch",
    "time_derivative",
    "jacobian",
    "pair_hamiltonian",
    "network_hamiltonian",
    "rollout",
    "rollout_states",
    "write_trajectory_csv",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1


class FlowLayer:
    """One exact-flow sublayer: kind 'position' or 'momentum' plus its potential."""

    def __init__(self, kind, potential):
        if kind not in ("position", "momentum"):
            raise ValueError("layer kind must be 'position' or 'momentum'")
        self.kind = kind
        self.potential = potential


class SympFlowModel:
    """Composition of L (position, momentum) exact-flow layer pairs."""

    def __init__(self, dim, n_pairs=3, widths=(32, 32), activation="tanh", dt=1.0, seed=0):
        if n_pairs < 1:
            raise ValueError("need at least one layer pair")
        if dt <= 0:
            raise ValueError("training horizon dt must be positive")
        self.dim = int(dim)
        self.dt = float(dt)
        self.widths = list(widths)
        self.activation = activation
        self.seed = seed
        seeds = np.random.SeedSequence(seed).spawn(2 * n_pairs)
        self.pairs = []
        for i in range(n_pairs):
            pos = FlowLayer("position", PotentialNet(dim, widths, activation, seeds[2 * i]))
            mom = FlowLayer("momentum", PotentialNet(dim, widths, activation, seeds[2 * i + 1]))
            self.pairs.append((pos, mom))

    @classmethod
    def from_pairs(cls, pairs, dim, dt=1.0):
        """Build a model from explicit (position-potential, momentum-potential) pairs."""
        model = cls.__new__(cls)
        model.dim = int(dim)
        model.dt = float(dt)
        model.widths = None
        model.activation = None
        model.seed = None
        model.pairs = [
            (FlowLayer("position", vp), FlowLayer("momentum", vm)) for vp, vm in pairs
        ]
        if not model.pairs:
            raise ValueError("need at least one layer pair")
        return model

    @property
    def n_pairs(self):
        return len(self.pairs)

    def nets(self):
        out = []
        for pos, mom in self.pairs:
            out.extend([pos.potential, mom.potential])
        return out

    def param_vars(self):
        out = []
        for net in self.nets():
            out.extend(net.param_vars())
        return out

    @property
    def n_params(self):
        return sum(net.n_params for net in self.nets())

    def get_flat(self):
        return np.concatenate([net.get_flat() for net in self.nets()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        off = 0
        for net in self.nets():
            n = net.n_params
            net.set_flat(flat[off : off + n])
            off += n
        if off != flat.size:
            raise ValueError(f"expected {off} parameters, got {flat.size}")

    def zero_grad(self):
        for net in self.nets():
            net.zero_grad()

    def flow(self, t, X):
        """Batched forward map (rollout protocol)."""
        return forward_batch(self, t, X)


# ---------------------------------------------------------------------------
# layer evaluation helpers (numeric or traced, batched)
# ---------------------------------------------------------------------------


def _stacked_shift(net, t, Z, Zdot=None, traced=False, want_vdot=False):
    """Increment grad V(t, .) - grad V(0, .) at Z, evaluated in one stacked call.

    Returns (shift, shift_rate, vdot_top) where shift_rate is the total time
    derivative of the increment given state tangent Zdot (None if Zdot is
    None) and vdot_top is dV/dt at (t, Z) (None unless want_vdot).
    """
    B = value_of(Z).shape[0]
    t_arr = np.asarray(t, dtype=float)
    t_top = np.full(B, float(t_arr)) if t_arr.ndim == 0 else t_arr
    t2 = np.concatenate([t_top, np.zeros(B)])
    Z2 = concat_rows([Z, Z])
    if Zdot is None:
        _, G2, _, _ = net.derivs(t2, Z2, traced=traced)
        Gz = G2[:, 1:]
        shift = Gz[:B] - Gz[B:]
        rate = None
    else:
        wt2 = np.concatenate([np.ones(B), np.zeros(B)])
        Zd2 = concat_rows([Zdot, Zdot])
        _, G2, _, Gd2 = net.derivs(t2, Z2, wt=wt2, Wz=Zd2, traced=traced)
        Gz = G2[:, 1:]
        shift = Gz[:B] - Gz[B:]
        Gdz = Gd2[:, 1:]
        rate = Gdz[:B] - Gdz[B:]
    vdot = G2[:, 0][:B] if want_vdot else None
    return shift, rate, vdot


def _forward_core(model, t, Q, P, Qdot=None, Pdot=None, traced=False):
    """Apply all layer pairs; optionally propagate the time derivative."""
    with_rate = Qdot is not None
    for pos, mom in model.pairs:
        shift, rate, _ = _stacked_shift(
            pos.potential, t, Q, Qdot if with_rate else None, traced
        )
        P = P - shift
        if with_rate:
            Pdot = Pdot - rate
        shift, rate, _ = _stacked_shift(
            mom.potential, t, P, Pdot if with_rate else None, traced
        )
        Q = Q + shift
        if with_rate:
            Qdot = Qdot + rate
    return Q, P, Qdot, Pdot


def _ham_core(model, t, Q, P, traced=False):
    """Extracted Hamiltonian H(t, x), aggregating pairs last to first."""
    acc = None
    for pos, mom in reversed(model.pairs):
        shift_m, _, vdot_m = _stacked_shift(
            mom.potential, t, P, traced=traced, want_vdot=True
        )
        Q = Q - shift_m
        shift_p, _, vdot_p = _stacked_shift(
            pos.potential, t, Q, traced=traced, want_vdot=True
        )
        term = vdot_m + vdot_p
        acc = term if acc is None else acc + term
        P = P + shift_p
    return acc


# ---------------------------------------------------------------------------
# public single-point operations
# ---------------------------------------------------------------------------


def _coerce_state(x, dim):
    pt = isinstance(x, PhasePoint)
    xv = x.as_array() if pt else np.asarray(x, dtype=float)
    if xv.shape != (2 * dim,):
        raise ValueError(f"expected state of length {2 * dim}, got shape {xv.shape}")
    return xv, pt


def _restore(out, pt):
    return PhasePoint.from_array(out) if pt else out


def apply_position_flow(layer, t, x):
    """(q, p) -> (q, p - (grad_q V(t,q) - grad_q V(0,q)))."""
    if layer.kind != "position":
        raise ValueError("not a position layer")
    xv, pt = _coerce_state(x, layer.potential.dim)
    d = layer.potential.dim
    shift, _, _ = _stacked_shift(layer.potential, float(t), xv[None, :d])
    out = xv.copy()
    out[d:] -= shift[0]
    return _restore(out, pt)


def apply_momentum_flow(layer, t, x):
    """(q, p) -> (q + (grad_p V(t,p) - grad_p V(0,p)), p)."""
    if layer.kind != "momentum":
        raise ValueError("not a momentum layer")
    xv, pt = _coerce_state(x, layer.potential.dim)
    d = layer.potential.dim
    shift, _, _ = _stacked_shift(layer.potential, float(t), xv[None, d:])
    out = xv.copy()
    out[:d] += shift[0]
    return _restore(out, pt)


def invert_layer(layer, t, y):
    """Closed-form inverse of a single sublayer."""
    yv, pt = _coerce_state(y, layer.potential.dim)
    d = layer.potential.dim
    out = yv.copy()
    if layer.kind == "position":
        shift, _, _ = _stacked_shift(layer.potential, float(t), yv[None, :d])
        out[d:] += shift[0]
    else:
        shift, _, _ = _stacked_shift(layer.potential, float(t), yv[None, d:])
        out[:d] -= shift[0]
    return _restore(out, pt)


def invert(model, t, y):
    """Inverse of the full composition (all sublayer inverses, reversed)."""
    yv, pt = _coerce_state(y, model.dim)
    out = yv
    for pos, mom in reversed(model.pairs):
        out = invert_layer(mom, t, out)
        out = invert_layer(pos, t, out)
    return _restore(out, pt)


def forward_batch(model, t, X):
    """Forward map on a (B, 2d) batch; t scalar or (B,)."""
    X = np.asarray(X, dtype=float)
    d = model.dim
    Q, P, _, _ = _forward_core(model, t, X[:, :d], X[:, d:])
    out = np.concatenate([Q, P], axis=1)
    if not np.all(np.isfinite(out)):
        raise NumericalError("flow evaluation produced non-finite values")
    return out


def forward(model, t, x):
    """Flow-map value at a single phase point."""
    xv, pt = _coerce_state(x, model.dim)
    out = forward_batch(model, float(t), xv[None, :])[0]
    return _restore(out, pt)


def time_derivative(model, t, x):
    """Exact d/dt of forward(model, t, x) at fixed x, as a 2d-vector."""
    xv, _ = _coerce_state(x, model.dim)
    d = model.dim
    Q = xv[None, :d]
    P = xv[None, d:]
    _, _, Qdot, Pdot = _forward_core(
        model, float(t), Q, P, Qdot=np.zeros_like(Q), Pdot=np.zeros_like(P)
    )
    return np.concatenate([Qdot[0], Pdot[0]])


def jacobian(model, t, x, step=1e-5):
    """Jacobian of x -> forward(model, t, x), central finite differences."""
    xv, _ = _coerce_state(x, model.dim)
    return diffeng.fd_jacobian(lambda v: forward_batch(model, float(t), v[None, :])[0], xv, step)


def pair_hamiltonian(pair_index, model, t, x):
    """Generating Hamiltonian of pair i evaluated at (t, x); i is 1-based."""
    if not 1 <= pair_index <= model.n_pairs:
        raise ValueError(f"pair index {pair_index} out of range 1..{model.n_pairs}")
    xv, _ = _coerce_state(x, model.dim)
    d = model.dim
    pos, mom = model.pairs[pair_index - 1]
    sub = SympFlowModel.from_pairs([(pos.potential, mom.potential)], d, model.dt)
    return float(value_of(_ham_core(sub, float(t), xv[None, :d], xv[None, d:]))[0])


def network_hamiltonian(model, t, x):
    """Time-dependent Hamiltonian generating the whole composition."""
    xv, _ = _coerce_state(x, model.dim)
    d = model.dim
    return float(_ham_core(model, float(t), xv[None, :d], xv[None, d:])[0])


# ---------------------------------------------------------------------------
# long-horizon rollout
# ---------------------------------------------------------------------------


def rollout_states(flow, t_final, x0, n_samples):
    """Windowed long-time extension sampled on a uniform grid.

    Evaluates psi_t = (partial window at t - k*dt) o (full window)^k where
    k = floor(t / dt). Returns (times (n,), states (n, 2d)).
    """
    if t_final < 0:
        raise ValueError("rollout horizon must be non-negative")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    dt = float(flow.dt)
    if dt <= 0:
        raise ValueError("flow window dt must be positive")
    xv, _ = _coerce_state(x0, flow.dim)
    times = np.linspace(0.0, float(t_final), int(n_samples))
    ks = np.floor(times / dt).astype(int)
    rems = times - ks * dt
    states = np.empty((times.size, xv.size))
    base = xv.copy()
    k_cur = 0
    for k in np.unique(ks):
        while k_cur < k:
            base = flow.flow(dt, base[None, :])[0]
            k_cur += 1
        sel = ks == k
        states[sel] = flow.flow(rems[sel], np.broadcast_to(base, (int(sel.sum()), base.size)))
    return times, states


def rollout(flow, t_final, x0, n_samples):
    """Rollout as a list of (time, PhasePoint) samples."""
    times, states = rollout_states(flow, t_final, x0, n_samples)
    return [(float(t), PhasePoint.from_array(s)) for t, s in zip(times, states)]


def write_trajectory_csv(path, times, states, energies):
    """CSV with header t, q1..qd, p1..pd, energy."""
    states = np.asarray(states, dtype=float)
    d = states.shape[1] // 2
    header = ["t"] + [f"q{i + 1}" for i in range(d)] + [f"p{i + 1}" for i in range(d)] + ["energy"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for t, row, e in zip(times, states, energies):
            fields = [repr(float(t))] + [repr(float(v)) for v in row] + [repr(float(e))]
            fh.write(",".join(fields) + "\n")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, model, system_name):
    """Self-describing JSON checkpoint; round-trips parameters bit-exactly."""
    if isinstance(model, SympFlowModel):
        if model.widths is None:
            raise ValueError("only MLP-backed models can be checkpointed")
        doc = {
            "format_version": CHECKPOINT_VERSION,
            "kind": "sympflow",
            "system": system_name,
            "dim": model.dim,
            "dt": model.dt,
            "pairs": model.n_pairs,
            "widths": model.widths,
            "activation": model.activation,
            "seed": model.seed,
            "networks": [],
        }
        for i, (pos, mom) in enumerate(model.pairs, start=1):
            doc["networks"].append({"role": f"position_{i}", **net_to_doc(pos.potential)})
            doc["networks"].append({"role": f"momentum_{i}", **net_to_doc(mom.potential)})
    elif isinstance(model, BaselineFlowNet):
        doc = {
            "format_version": CHECKPOINT_VERSION,
            "kind": "baseline",
            "system": system_name,
            "dim": model.dim,
            "dt": model.dt,
            "widths": model.widths,
            "activation": model.activation,
            "seed": None,
            "networks": [{"role": "flow", **net_to_doc(model)}],
        }
    else:
        raise ValueError(f"cannot checkpoint object of type {type(model).__name__}")
    out_dir = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Rebuild a model from a checkpoint; returns (model, metadata dict)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {doc.get('format_version')}")
    kind = doc.get("kind")
    meta = {k: doc[k] for k in ("kind", "system", "dim", "dt")}
    if kind == "sympflow":
        model = SympFlowModel(
            doc["dim"],
            n_pairs=doc["pairs"],
            widths=doc["widths"],
            activation=doc["activation"],
            dt=doc["dt"],
            seed=doc["seed"] if doc["seed"] is not None else 0,
        )
        nets = model.nets()
        if len(doc["networks"]) != len(nets):
            raise ValueError("checkpoint network count does not match architecture")
        for net, net_doc in zip(nets, doc["networks"]):
            net_from_doc(net, net_doc)
    elif kind == "baseline":
        model = BaselineFlowNet(
            doc["dim"], doc["widths"], activation=doc["activation"], dt=doc["dt"]
        )
        net_from_doc(model, doc["networks"][0])
    else:
        raise ValueError(f"unknown checkpoint kind '{kind}'")
    return model, meta
