"""Physics-informed + Hamiltonian-matching training.

Two loss terms over collocation batches drawn from the sampling box and the
time window [0, dt]:

* residual loss: mean over samples of
  || d/dt psi_t(x0) - J grad H(psi_t(x0)) ||^2, with the time derivative
  computed exactly (tangent propagation, not finite differences);
* Hamiltonian-matching loss: mean of (H_net(t, x) - H(x))^2, where H_net is
  the extracted Hamiltonian of the composition.

The symplectic model trains on the weighted sum of both; the unconstrained
baseline has no extracted Hamiltonian and trains on the residual loss only.
Optimisation is plain minibatch Adam with bias correction. Collocation points
are resampled every epoch from one seeded generator, so a (seed, config) pair
reproduces a run bit-for-bit in the default sequential mode.
"""

from dataclasses import dataclass

import numpy as np

from . import diffeng
from .diffeng import Var, concat_cols, square, value_of, vsum
from .errors import NumericalError, TrainingError
from .flows import SympFlowModel, _forward_core, _ham_core
from .potential import BaselineFlowNet
from .systems import PhasePoint, j_apply

__all__ = [
    "TrainingConfig",
    "AdamState",
    "adam_step",
    "pi_loss",
    "hamiltonian_matching_loss",
    "total_loss",
    "train",
    "write_loss_history",
]


@dataclass
class TrainingConfig:
    """Hyperparameters for one training run."""

    dt: float = 1.0
    n_pi: int = 2048
    n_match: int = 2048
    epochs: int = 5000
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    w_pi: float = 1.0
    w_match: float = 1.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_pi < 1 or self.n_match < 1:
            raise ValueError("sample counts must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("learning rate and eps must be positive")


@dataclass
class AdamState:
    """First/second moment estimates aligned with the parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update; returns (new params, new state)."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and state lengths must agree")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NumericalError(f"non-finite gradient at parameter index {int(bad[0])}")
    k = state.step + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * grads
    v = config.beta2 * state.v + (1.0 - config.beta2) * grads * grads
    m_hat = m / (1.0 - config.beta1**k)
    v_hat = v / (1.0 - config.beta2**k)
    new_params = params - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    return new_params, AdamState(m, v, k)


# ---------------------------------------------------------------------------
# loss graphs
# ---------------------------------------------------------------------------


def _as_batch(batch, dim):
    """Normalise [(t, x), ...] or (t_array, X_array) to (t (B,), X (B, 2d))."""
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[1]) == 2:
        t = np.asarray(batch[0], dtype=float)
        X = np.asarray(batch[1], dtype=float)
    else:
        batch = list(batch)
        if not batch:
            raise ValueError("batch must be non-empty")
        ts, xs = [], []
        for t_i, x_i in batch:
            ts.append(float(t_i))
            xs.append(x_i.as_array() if isinstance(x_i, PhasePoint) else np.asarray(x_i, float))
        t = np.array(ts)
        X = np.stack(xs)
    if t.ndim == 0:
        t = np.full(X.shape[0], float(t))
    if X.size == 0 or t.size == 0:
        raise ValueError("batch must be non-empty")
    if X.shape[1] != 2 * dim or t.shape[0] != X.shape[0]:
        raise ValueError("batch shapes do not match the system dimension")
    return t, X


def _vector_field_op(system, psi):
    """J grad H at tape-valued states, with the exact pullback."""
    if not isinstance(psi, Var):
        return j_apply(system.energy_gradient(psi), system.dim)
    val = j_apply(system.energy_gradient(psi.value), system.dim)
    d = system.dim

    def bw(out_grads):
        g = out_grads[0]
        if g is None:
            return (None,)
        # d(J grad H)/d psi transposed = -Hess H . J
        return (-system.energy_hessian_vp(psi.value, j_apply(g, d)),)

    return diffeng.make_op((psi,), (val,), bw)[0]


def _pi_loss_value(flow, system, t, X, traced):
    d = system.dim
    if isinstance(flow, SympFlowModel):
        Q, P, Qdot, Pdot = _forward_core(
            flow,
            t,
            X[:, :d],
            X[:, d:],
            Qdot=np.zeros((X.shape[0], d)),
            Pdot=np.zeros((X.shape[0], d)),
            traced=traced,
        )
        psi = concat_cols([Q, P])
        rate = concat_cols([Qdot, Pdot])
    elif isinstance(flow, BaselineFlowNet):
        psi, rate = flow.flow_and_rate(t, X, traced=traced)
    else:
        # generic map (t, x) -> x: residual with a finite-difference rate
        h = 1e-5
        rows, rates = [], []
        for t_i, x_i in zip(t, X):
            rows.append(np.asarray(flow(t_i, x_i), dtype=float))
            xp = np.asarray(flow(t_i + h, x_i), dtype=float)
            xm = np.asarray(flow(t_i - h, x_i), dtype=float)
            rates.append((xp - xm) / (2.0 * h))
        psi = np.stack(rows)
        rate = np.stack(rates)
    residual = rate - _vector_field_op(system, psi)
    return vsum(square(residual)) * (1.0 / X.shape[0])


def _match_loss_value(model, system, t, X, traced):
    d = system.dim
    h_net = _ham_core(model, t, X[:, :d], X[:, d:], traced=traced)
    diff = h_net - system.energy(X)
    return vsum(square(diff)) * (1.0 / X.shape[0])


def pi_loss(flow, system, batch):
    """Mean squared residual of the equations of motion along the flow."""
    t, X = _as_batch(batch, system.dim)
    return float(value_of(_pi_loss_value(flow, system, t, X, traced=False)))


def hamiltonian_matching_loss(model, system, batch):
    """Mean squared mismatch between extracted and target Hamiltonian."""
    t, X = _as_batch(batch, system.dim)
    return float(value_of(_match_loss_value(model, system, t, X, traced=False)))


def total_loss(model, system, pi_batch, match_batch, w_pi=1.0, w_match=1.0):
    """Weighted sum of the residual and Hamiltonian-matching losses."""
    out = 0.0
    if w_pi != 0.0:
        out += w_pi * pi_loss(model, system, pi_batch)
    if w_match != 0.0:
        out += w_match * hamiltonian_matching_loss(model, system, match_batch)
    return out


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _batch_slices(n, batch_size):
    return [slice(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def train(model, system, config):
    """Minibatch Adam on the combined loss; baseline models use the residual
    loss only. Returns (model, history) with one (epoch, total, pi, match)
    record per epoch.
    """
    if model.dim != system.dim:
        raise ValueError("model and system dimensions do not match")
    baseline = isinstance(model, BaselineFlowNet)
    model.dt = float(config.dt)
    rng = np.random.default_rng(config.seed)
    params = model.get_flat()
    state = AdamState.zeros(params.size)
    history = []
    lo, hi = system.domain.lower, system.domain.upper

    for epoch in range(config.epochs):
        t1 = rng.uniform(0.0, config.dt, size=config.n_pi)
        X1 = rng.uniform(lo, hi, size=(config.n_pi, 2 * system.dim))
        if not baseline:
            t2 = rng.uniform(0.0, config.dt, size=config.n_match)
            X2 = rng.uniform(lo, hi, size=(config.n_match, 2 * system.dim))
            sl2 = _batch_slices(config.n_match, config.batch_size)
        sl1 = _batch_slices(config.n_pi, config.batch_size)
        n_steps = len(sl1) if baseline else max(len(sl1), len(sl2))

        ep_pi = ep_match = 0.0
        for k in range(n_steps):
            model.zero_grad()
            s1 = sl1[k % len(sl1)]
            loss_pi = _pi_loss_value(model, system, t1[s1], X1[s1], traced=True)
            if baseline:
                loss = loss_pi * config.w_pi if config.w_pi != 1.0 else loss_pi
                loss_match_val = 0.0
            else:
                s2 = sl2[k % len(sl2)]
                loss_match = _match_loss_value(model, system, t2[s2], X2[s2], traced=True)
                loss = loss_pi * config.w_pi + loss_match * config.w_match
                loss_match_val = float(loss_match.value)
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                model.set_flat(params)
                raise TrainingError(
                    f"training diverged at epoch {epoch}", params=params, history=history
                )
            loss.backward()
            grads = np.concatenate(
                [
                    (p.grad if p.grad is not None else np.zeros_like(p.value)).ravel()
                    for p in model.param_vars()
                ]
            )
            try:
                params, state = adam_step(params, grads, state, config)
            except NumericalError as exc:
                raise TrainingError(str(exc), params=params, history=history) from exc
            model.set_flat(params)
            ep_pi += float(loss_pi.value)
            ep_match += loss_match_val
        ep_pi /= n_steps
        ep_match /= n_steps
        history.append(
            (epoch, config.w_pi * ep_pi + config.w_match * ep_match, ep_pi, ep_match)
        )
    return model, history


def write_loss_history(path, history):
    """CSV with header epoch, loss_total, loss_pi, loss_match."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss_total,loss_pi,loss_match\n")
        for epoch, total, pi, match in history:
            fh.write(f"{int(epoch)},{repr(float(total))},{repr(float(pi))},{repr(float(match))}\n")
