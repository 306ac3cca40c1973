import numpy as np
import pytest

from sympflow.diffeng import fd_jacobian
from sympflow.errors import IntegrationError
from sympflow.integrators import (
    AdaptiveConfig,
    StepRecord,
    _rk45_fixed,
    rk45_integrate,
    rk45_sample,
    stormer_verlet,
)
from sympflow.systems import exact_flow_harmonic, get_system, j_matrix


@pytest.fixture
def harmonic():
    return get_system("harmonic")


@pytest.fixture
def henon_heiles():
    return get_system("henon-heiles")


# -- adaptive Dormand-Prince ---------------------------------------------------


def test_rk45_endpoint_matches_reference_solver(harmonic):
    # at matched tolerances our controller should land within a small factor
    # of scipy's RK45 (same pair, same error norm)
    from scipy.integrate import solve_ivp

    records = rk45_integrate(harmonic, np.array([1.0, 0.0]), 2 * np.pi)
    end = records[-1].x.as_array()
    assert records[-1].t == pytest.approx(2 * np.pi, abs=1e-12)
    err = np.linalg.norm(end - np.array([1.0, 0.0]))
    sol = solve_ivp(
        lambda t, y: np.array([y[1], -y[0]]),
        (0.0, 2 * np.pi),
        [1.0, 0.0],
        method="RK45",
        rtol=1e-3,
        atol=1e-6,
    )
    ref_err = np.linalg.norm(sol.y[:, -1] - np.array([1.0, 0.0]))
    assert err <= 2.0 * ref_err
    assert err <= 5e-3


def test_rk45_endpoint_tight_tolerances(harmonic):
    cfg = AdaptiveConfig(rtol=1e-8, atol=1e-10)
    records = rk45_integrate(harmonic, np.array([1.0, 0.0]), 2 * np.pi, cfg)
    end = records[-1].x.as_array()
    assert np.linalg.norm(end - np.array([1.0, 0.0])) <= 1e-7


def test_rk45_zero_horizon(harmonic):
    records = rk45_integrate(harmonic, np.array([0.3, 0.4]), 0.0)
    assert len(records) == 1
    assert records[0].t == 0.0
    assert np.array_equal(records[0].x.as_array(), [0.3, 0.4])


def test_rk45_records_monotone(harmonic):
    records = rk45_integrate(harmonic, np.array([1.0, 0.0]), 10.0)
    times = [r.t for r in records]
    assert all(b > a for a, b in zip(times, times[1:]))
    assert all(isinstance(r, StepRecord) for r in records)


def test_rk45_dense_output_accuracy(harmonic):
    # interpolation error must stay at the level of the integration error
    times = np.linspace(0.0, 10.0, 97)
    states = rk45_sample(harmonic, np.array([1.0, 0.0]), times)
    exact = np.stack([exact_flow_harmonic(t, np.array([1.0, 0.0])) for t in times])
    assert np.abs(states - exact).max() <= 5e-3
    tight = rk45_sample(harmonic, np.array([1.0, 0.0]), times, AdaptiveConfig(rtol=1e-8, atol=1e-10))
    assert np.abs(tight - exact).max() <= 1e-6


def test_rk45_henon_heiles_energy_drift(henon_heiles):
    x0 = np.array([0.1, -0.1, 0.1, 0.1])
    h0 = float(henon_heiles.energy(x0))
    records = rk45_integrate(henon_heiles, x0, 10.0)
    drift = max(abs(float(henon_heiles.energy(r.x.as_array())) - h0) for r in records)
    assert drift <= 1e-3
    # oracle: tight-tolerance re-integration agrees with the default run
    tight = rk45_sample(
        henon_heiles, x0, np.array([10.0]), AdaptiveConfig(rtol=1e-10, atol=1e-12)
    )[0]
    end = records[-1].x.as_array()
    assert np.linalg.norm(end - tight) <= 1e-2


def test_rk45_fifth_order_convergence(harmonic):
    # classical order check at fixed step: halving h must cut the endpoint
    # error by at least 2^3 (fifth order gives ~2^5)
    x0 = np.array([1.0, 0.0])
    exact = exact_flow_harmonic(10.0, x0)
    e1 = np.linalg.norm(_rk45_fixed(harmonic, x0, 10.0, 0.5) - exact)
    e2 = np.linalg.norm(_rk45_fixed(harmonic, x0, 10.0, 0.25) - exact)
    assert e1 / e2 >= 8.0


def test_rk45_step_budget_error(harmonic):
    with pytest.raises(IntegrationError) as info:
        rk45_integrate(harmonic, np.array([1.0, 0.0]), 1000.0, AdaptiveConfig(max_steps=5))
    assert len(info.value.records) >= 1


def test_rk45_rejects_bad_arguments(harmonic):
    with pytest.raises(ValueError):
        rk45_integrate(harmonic, np.array([1.0, 0.0]), -1.0)
    with pytest.raises(ValueError):
        rk45_integrate(harmonic, np.array([1.0, 0.0, 0.0]), 1.0)
    with pytest.raises(ValueError):
        AdaptiveConfig(rtol=0.0)


# -- Stormer-Verlet ------------------------------------------------------------


def test_verlet_equilibrium_stays(harmonic):
    records = stormer_verlet(harmonic, np.zeros(2), 0.3, 50)
    assert all(np.array_equal(r.x.as_array(), np.zeros(2)) for r in records)


def test_verlet_single_step_hand_formula(harmonic):
    q, p, h = 0.7, -0.2, 0.1
    records = stormer_verlet(harmonic, np.array([q, p]), h, 1)
    p_half = p - 0.5 * h * q
    q1 = q + h * p_half
    p1 = p_half - 0.5 * h * q1
    assert np.allclose(records[-1].x.as_array(), [q1, p1], atol=1e-15)
    assert records[-1].t == h


def test_verlet_energy_oscillation_bounded(harmonic):
    records = stormer_verlet(harmonic, np.array([1.0, 0.0]), 0.1, 1000)
    h0 = 0.5
    drift = np.array([abs(float(harmonic.energy(r.x.as_array())) - h0) for r in records])
    assert drift.max() <= 0.01
    # no secular trend: linear fit slope of |H - H0| per step
    slope = np.polyfit(np.arange(drift.size), drift, 1)[0]
    assert abs(slope) <= 1e-6


def test_verlet_step_is_symplectic(henon_heiles, rng):
    x = rng.uniform(-0.3, 0.3, size=4)

    def one_step(v):
        return stormer_verlet(henon_heiles, v, 0.05, 1)[-1].x.as_array()

    M = fd_jacobian(one_step, x, 1e-6)
    J = j_matrix(2)
    assert np.abs(M.T @ J @ M - J).max() <= 1e-6


def test_verlet_time_reversible(henon_heiles, rng):
    x0 = rng.uniform(-0.3, 0.3, size=4)
    fwd = stormer_verlet(henon_heiles, x0, 0.05, 200)[-1].x.as_array()
    back = stormer_verlet(henon_heiles, fwd, -0.05, 200)[-1].x.as_array()
    assert np.linalg.norm(back - x0) <= 1e-8


def test_verlet_requires_separable(harmonic):
    from dataclasses import replace

    crippled = replace(harmonic, grad_potential=None)
    with pytest.raises(ValueError, match="separable"):
        stormer_verlet(crippled, np.array([1.0, 0.0]), 0.1, 10)
