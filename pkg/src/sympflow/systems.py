"""Target Hamiltonian systems: energies, analytic gradients, sampling domains.

State convention: a phase point is x = (q, p) with q, p in R^d, flattened to a
2d-vector ordered (q_1..q_d, p_1..p_d). Gradients follow the same ordering,
and the canonical structure matrix J acts as J g = (g_p, -g_q). All energy /
gradient functions accept a single 2d-vector or a (B, 2d) batch.

Systems are looked up by name ("harmonic", "henon-heiles"); the registry is
what the CLI and config files refer to.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "PhasePoint",
    "DomainBox",
    "HamiltonianSystem",
    "eval_energy",
    "eval_energy_gradient",
    "vector_field",
    "exact_flow_harmonic",
    "sample_domain",
    "j_apply",
    "j_matrix",
    "get_system",
    "system_names",
    "harmonic_system",
    "henon_heiles_system",
]


@dataclass(frozen=True)
class PhasePoint:
    """A point (q, p) in 2d-dimensional phase space."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.ndim != 1 or p.ndim != 1 or q.size != p.size or q.size < 1:
            raise ValueError("q and p must be 1-D vectors of equal length >= 1")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase point entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def dim(self):
        return self.q.size

    def as_array(self):
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size % 2 != 0:
            raise ValueError("state must be a flat vector of even length")
        d = x.size // 2
        return cls(x[:d], x[d:])


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned sampling box in phase space."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-D vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("domain box requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size


@dataclass(frozen=True)
class HamiltonianSystem:
    """An analytic Hamiltonian with its gradient and sampling domain.

    energy / energy_gradient / energy_hessian_vp accept (2d,) vectors or
    (B, 2d) batches. grad_potential / grad_kinetic are set for separable
    systems H = T(p) + U(q) and enable the leapfrog integrator.
    """

    name: str
    dim: int
    energy: Callable[[np.ndarray], np.ndarray]
    energy_gradient: Callable[[np.ndarray], np.ndarray]
    energy_hessian_vp: Callable[[np.ndarray, np.ndarray], np.ndarray]
    domain: DomainBox
    exact_flow: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    grad_potential: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None)
    grad_kinetic: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None)

    @property
    def separable(self):
        return self.grad_potential is not None and self.grad_kinetic is not None


def _as_state(system, x):
    if isinstance(x, PhasePoint):
        x = x.as_array()
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2 * system.dim:
        raise ValueError(
            f"state dimension {x.shape[-1]} does not match system '{system.name}' (2d={2 * system.dim})"
        )
    return x


def eval_energy(system, x):
    """H(x) for a single phase point."""
    return float(system.energy(_as_state(system, x)))


def eval_energy_gradient(system, x):
    """Gradient of H at x, ordered (dq_1..dq_d, dp_1..dp_d)."""
    return system.energy_gradient(_as_state(system, x))


def j_apply(x, d=None):
    """Canonical structure matrix: (q, p) components g -> (g_p, -g_q)."""
    x = np.asarray(x, dtype=float)
    if d is None:
        d = x.shape[-1] // 2
    return np.concatenate([x[..., d:], -x[..., :d]], axis=-1)


def j_matrix(d):
    """The 2d x 2d block matrix [[0, I], [-I, 0]]."""
    J = np.zeros((2 * d, 2 * d))
    J[:d, d:] = np.eye(d)
    J[d:, :d] = -np.eye(d)
    return J


def vector_field(system, x):
    """Right-hand side J grad H(x) of the equations of motion."""
    return j_apply(system.energy_gradient(_as_state(system, x)), system.dim)


def exact_flow_harmonic(t, x0):
    """Closed-form harmonic-oscillator flow (rotation in phase space)."""
    pt = isinstance(x0, PhasePoint)
    x = x0.as_array() if pt else np.asarray(x0, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError("harmonic oscillator state must be 2-dimensional")
    c, s = np.cos(t), np.sin(t)
    q, p = x[..., 0], x[..., 1]
    out = np.stack([q * c + p * s, -q * s + p * c], axis=-1)
    return PhasePoint.from_array(out) if pt else out


def sample_domain(box, n, seed):
    """n i.i.d. uniform points over the box; deterministic per seed."""
    if n < 1:
        raise ValueError("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.uniform(box.lower, box.upper, size=(n, box.dim))


# ---------------------------------------------------------------------------
# built-in systems
# ---------------------------------------------------------------------------


def harmonic_system():
    """1-dof oscillator, H = (q^2 + p^2) / 2, sampled on [-1, 1]^2."""

    def energy(x):
        return 0.5 * (x[..., 0] ** 2 + x[..., 1] ** 2)

    def gradient(x):
        return np.array(x, dtype=float, copy=True)

    def hessian_vp(x, v):
        return np.array(v, dtype=float, copy=True)

    return HamiltonianSystem(
        name="harmonic",
        dim=1,
        energy=energy,
        energy_gradient=gradient,
        energy_hessian_vp=hessian_vp,
        domain=DomainBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
        exact_flow=exact_flow_harmonic,
        grad_potential=lambda q: np.array(q, dtype=float, copy=True),
        grad_kinetic=lambda p: np.array(p, dtype=float, copy=True),
    )


def henon_heiles_system():
    """Two-dof system with cubic coupling, chaotic above the escape energy.

    H = (p1^2 + p2^2)/2 + (q1^2 + q2^2)/2 + q1^2 q2 - q2^3/3, sampled on
    [-0.5, 0.5]^4 (inside the bounded-motion region; escape energy is 1/6).
    """

    def energy(x):
        q1, q2, p1, p2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        return 0.5 * (p1**2 + p2**2) + 0.5 * (q1**2 + q2**2) + q1**2 * q2 - q2**3 / 3.0

    def gradient(x):
        q1, q2 = x[..., 0], x[..., 1]
        g = np.array(x, dtype=float, copy=True)
        g[..., 0] = q1 + 2.0 * q1 * q2
        g[..., 1] = q2 + q1**2 - q2**2
        return g

    def hessian_vp(x, v):
        q1, q2 = x[..., 0], x[..., 1]
        out = np.array(v, dtype=float, copy=True)
        out[..., 0] = (1.0 + 2.0 * q2) * v[..., 0] + 2.0 * q1 * v[..., 1]
        out[..., 1] = 2.0 * q1 * v[..., 0] + (1.0 - 2.0 * q2) * v[..., 1]
        return out

    def grad_potential(q):
        q1, q2 = q[..., 0], q[..., 1]
        g = np.array(q, dtype=float, copy=True)
        g[..., 0] = q1 + 2.0 * q1 * q2
        g[..., 1] = q2 + q1**2 - q2**2
        return g

    return HamiltonianSystem(
        name="henon-heiles",
        dim=2,
        energy=energy,
        energy_gradient=gradient,
        energy_hessian_vp=hessian_vp,
        domain=DomainBox(np.full(4, -0.5), np.full(4, 0.5)),
        grad_potential=grad_potential,
        grad_kinetic=lambda p: np.array(p, dtype=float, copy=True),
    )


_REGISTRY = {
    "harmonic": harmonic_system,
    "henon-heiles": henon_heiles_system,
}


def system_names():
    return sorted(_REGISTRY)


def get_system(name):
    """Look up a registered system by name."""
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(
            f"unknown system '{name}' (available: {', '.join(system_names())})"
        ) from None
