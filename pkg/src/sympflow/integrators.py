"""Classical reference integrators.

* :func:`rk45_integrate` — adaptive Dormand-Prince 5(4) embedded pair with the
  standard error-per-step controller (safety 0.9, step-factor clamp
  [0.2, 5.0]) and the quartic continuous extension for dense output.
* :func:`stormer_verlet` — fixed-step leapfrog (half-kick, drift, half-kick)
  for separable Hamiltonians H = T(p) + U(q).
"""

from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError
from .systems import PhasePoint, vector_field

__all__ = [
    "AdaptiveConfig",
    "StepRecord",
    "rk45_integrate",
    "rk45_sample",
    "stormer_verlet",
]


@dataclass(frozen=True)
class AdaptiveConfig:
    rtol: float = 1e-3
    atol: float = 1e-6
    initial_step: float = 1e-2
    max_steps: int = 100_000

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.initial_step <= 0 or self.max_steps < 1:
            raise ValueError("initial step and max steps must be positive")


@dataclass(frozen=True)
class StepRecord:
    t: float
    x: PhasePoint
    h: float


# Dormand-Prince 5(4) tableau. The fifth-order solution is propagated; E is
# the difference between the fifth- and fourth-order weights.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# quartic dense-output weights (Shampine's continuous extension)
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def _dp_step(f, t, y, h, k1):
    """One Dormand-Prince step; returns (y_new, err_vector, K stages)."""
    K = np.empty((7, y.size))
    K[0] = k1
    for i, a_row in enumerate(_A, start=1):
        K[i] = f(t + _C[i] * h, y + h * (a_row @ K[:i]))
    y_new = y + h * (_B @ K[:6])
    K[6] = f(t + h, y_new)  # FSAL stage, reused as k1 on acceptance
    err = h * (_E @ K)
    return y_new, err, K


def _error_norm(err, y0, y1, cfg):
    scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _rk45_core(system, x0, t_final, cfg, on_step):
    """Adaptive loop; calls on_step(t0, t1, y0, y1, h, K) per accepted step."""
    f = lambda t, y: vector_field(system, y)
    t = 0.0
    y = np.asarray(x0, dtype=float)
    h = min(cfg.initial_step, t_final)
    k1 = f(t, y)
    n_attempts = 0
    while t < t_final:
        if n_attempts >= cfg.max_steps:
            _raise_partial(on_step)
        h = min(h, t_final - t)
        y_new, err, K = _dp_step(f, t, y, h, k1)
        n_attempts += 1
        norm = _error_norm(err, y, y_new, cfg)
        if norm <= 1.0:
            on_step(t, t + h, y, y_new, h, K)
            t += h
            y = y_new
            k1 = K[6]
            factor = _MAX_FACTOR if norm == 0.0 else min(_MAX_FACTOR, _SAFETY * norm**-0.2)
        else:
            factor = max(_MIN_FACTOR, _SAFETY * norm**-0.2)
        h *= factor
        if t < t_final and t + h == t:
            _raise_partial(on_step)
    return y


def _raise_partial(on_step):
    records = getattr(on_step, "records", None)
    raise IntegrationError("adaptive integration exceeded the step budget", records)


def rk45_integrate(system, x0, t_final, cfg=None):
    """Integrate the system to t_final; returns the accepted StepRecords."""
    if t_final < 0:
        raise ValueError("t_final must be non-negative")
    cfg = cfg or AdaptiveConfig()
    xv = x0.as_array() if isinstance(x0, PhasePoint) else np.asarray(x0, dtype=float)
    if xv.shape != (2 * system.dim,):
        raise ValueError(f"state dimension must be {2 * system.dim}")
    records = [StepRecord(0.0, PhasePoint.from_array(xv), 0.0)]
    if t_final == 0:
        return records

    def on_step(t0, t1, y0, y1, h, K):
        records.append(StepRecord(t1, PhasePoint.from_array(y1), h))

    on_step.records = records
    _rk45_core(system, xv, float(t_final), cfg, on_step)
    return records


def rk45_sample(system, x0, times, cfg=None):
    """States at the requested times, via the quartic dense output."""
    cfg = cfg or AdaptiveConfig()
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("sample times must be sorted and non-negative")
    xv = x0.as_array() if isinstance(x0, PhasePoint) else np.asarray(x0, dtype=float)
    if xv.shape != (2 * system.dim,):
        raise ValueError(f"state dimension must be {2 * system.dim}")
    out = np.empty((times.size, xv.size))
    out[times == 0.0] = xv
    pending = np.flatnonzero(times > 0.0)
    idx = 0

    def on_step(t0, t1, y0, y1, h, K):
        nonlocal idx
        while idx < pending.size and times[pending[idx]] <= t1 + 1e-14:
            theta = (times[pending[idx]] - t0) / h
            q = _P.T @ K  # (4, n)
            poly = theta * (q[0] + theta * (q[1] + theta * (q[2] + theta * q[3])))
            out[pending[idx]] = y0 + h * poly
            idx += 1

    if pending.size:
        _rk45_core(system, xv, float(times[-1]), cfg, on_step)
        # guard against roundoff leaving the final sample uninterpolated
        while idx < pending.size:
            out[pending[idx]] = out[pending[idx] - 1] if pending[idx] > 0 else xv
            idx += 1
    return out


def _rk45_fixed(system, x0, t_final, h):
    """Fixed-step Dormand-Prince endpoint (for convergence-order checks)."""
    f = lambda t, y: vector_field(system, y)
    y = np.asarray(x0, dtype=float)
    n = int(round(t_final / h))
    t = 0.0
    for _ in range(n):
        y = _dp_step(f, t, y, h, f(t, y))[0]
        t += h
    return y


def stormer_verlet(system, x0, h, n):
    """Leapfrog integration of a separable system; returns n+1 StepRecords."""
    if not system.separable:
        raise ValueError(f"system '{system.name}' has no separable T(p) + U(q) split")
    if n < 1:
        raise ValueError("step count must be >= 1")
    if h == 0:
        raise ValueError("step size must be non-zero")
    xv = x0.as_array() if isinstance(x0, PhasePoint) else np.asarray(x0, dtype=float)
    if xv.shape != (2 * system.dim,):
        raise ValueError(f"state dimension must be {2 * system.dim}")
    d = system.dim
    q = xv[:d].copy()
    p = xv[d:].copy()
    records = [StepRecord(0.0, PhasePoint(q.copy(), p.copy()), 0.0)]
    for k in range(1, n + 1):
        p_half = p - 0.5 * h * system.grad_potential(q)
        q = q + h * system.grad_kinetic(p_half)
        p = p_half - 0.5 * h * system.grad_potential(q)
        records.append(StepRecord(k * h, PhasePoint(q.copy(), p.copy()), h))
    return records
