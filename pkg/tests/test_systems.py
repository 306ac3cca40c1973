import numpy as np
import pytest

from sympflow.diffeng import fd_gradient
from sympflow.systems import (
    DomainBox,
    PhasePoint,
    eval_energy,
    eval_energy_gradient,
    exact_flow_harmonic,
    get_system,
    j_apply,
    sample_domain,
    system_names,
    vector_field,
)


def test_registry():
    assert system_names() == ["harmonic", "henon-heiles"]
    with pytest.raises(ValueError, match="unknown system"):
        get_system("kepler")


def test_harmonic_energy_values():
    s = get_system("harmonic")
    assert eval_energy(s, np.array([0.0, 0.0])) == 0.0
    assert eval_energy(s, np.array([3.0, 4.0])) == 12.5
    assert eval_energy(s, PhasePoint(np.array([3.0]), np.array([4.0]))) == 12.5


def test_henon_heiles_energy_value():
    s = get_system("henon-heiles")
    assert eval_energy(s, np.array([0.0, 1.0, 0.0, 0.0])) == pytest.approx(1.0 / 6.0, abs=1e-15)


def test_energy_dimension_mismatch():
    s = get_system("harmonic")
    with pytest.raises(ValueError, match="dimension"):
        eval_energy(s, np.array([1.0, 2.0, 3.0, 4.0]))
    with pytest.raises(ValueError, match="dimension"):
        eval_energy_gradient(get_system("henon-heiles"), np.array([1.0, 0.0]))


def test_henon_heiles_gradient_values():
    s = get_system("henon-heiles")
    assert np.array_equal(eval_energy_gradient(s, np.zeros(4)), np.zeros(4))
    assert np.array_equal(
        eval_energy_gradient(s, np.array([0.0, 1.0, 0.0, 0.0])), np.zeros(4)
    )
    assert np.array_equal(
        eval_energy_gradient(s, np.array([1.0, 0.0, 0.0, 0.0])),
        np.array([1.0, 1.0, 0.0, 0.0]),
    )


def test_vector_field_values():
    h = get_system("harmonic")
    assert np.array_equal(vector_field(h, np.array([1.0, 0.0])), np.array([0.0, -1.0]))
    assert np.array_equal(vector_field(h, np.zeros(2)), np.zeros(2))
    hh = get_system("henon-heiles")
    assert np.array_equal(vector_field(hh, np.array([0.0, 1.0, 0.0, 0.0])), np.zeros(4))


@pytest.mark.parametrize("name", ["harmonic", "henon-heiles"])
def test_gradient_matches_finite_differences(name, rng):
    s = get_system(name)
    pts = sample_domain(s.domain, 100, seed=5)
    for x in pts:
        g = s.energy_gradient(x)
        g_fd = fd_gradient(lambda v: float(s.energy(v)), x, step=1e-5)
        assert np.linalg.norm(g_fd - g) <= 1e-6 * (1 + np.linalg.norm(g))


@pytest.mark.parametrize("name", ["harmonic", "henon-heiles"])
def test_vector_field_is_j_rotation(name, rng):
    s = get_system(name)
    for x in sample_domain(s.domain, 25, seed=2):
        assert np.array_equal(vector_field(s, x), j_apply(s.energy_gradient(x)))


@pytest.mark.parametrize("name", ["harmonic", "henon-heiles"])
def test_hessian_vp_matches_fd(name, rng):
    s = get_system(name)
    for x in sample_domain(s.domain, 20, seed=3):
        v = rng.normal(size=2 * s.dim)
        h = 1e-5
        fd = (s.energy_gradient(x + h * v) - s.energy_gradient(x - h * v)) / (2 * h)
        assert np.allclose(s.energy_hessian_vp(x, v), fd, atol=1e-8)


def test_exact_flow_harmonic_values():
    x = np.array([1.0, 0.0])
    assert np.array_equal(exact_flow_harmonic(0.0, x), x)
    assert np.allclose(exact_flow_harmonic(np.pi / 2, x), [0.0, -1.0], atol=1e-15)
    x2 = np.array([0.3, -0.7])
    assert np.allclose(exact_flow_harmonic(2 * np.pi, x2), x2, atol=1e-14)
    pt = exact_flow_harmonic(1.0, PhasePoint(np.array([1.0]), np.array([0.0])))
    assert isinstance(pt, PhasePoint)


def test_exact_flow_conserves_energy():
    s = get_system("harmonic")
    x0 = np.array([0.6, -0.8])
    h0 = eval_energy(s, x0)
    for t in np.linspace(-100, 100, 81):
        h = eval_energy(s, exact_flow_harmonic(t, x0))
        assert abs(h - h0) <= 1e-12 * abs(h0)


def test_sample_domain_containment_and_determinism():
    box = DomainBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    pts = sample_domain(box, 100, seed=0)
    assert pts.shape == (100, 2)
    assert np.all(pts >= -1) and np.all(pts <= 1)
    assert np.array_equal(pts, sample_domain(box, 100, seed=0))
    assert not np.array_equal(pts, sample_domain(box, 100, seed=1))


def test_sample_domain_mean():
    box = DomainBox(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    pts = sample_domain(box, 10_000, seed=7)
    assert np.abs(pts.mean(axis=0)).max() < 0.05


def test_sample_domain_rejects_zero():
    box = DomainBox(np.array([-1.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        sample_domain(box, 0, seed=0)


def test_phase_point_validation():
    with pytest.raises(ValueError):
        PhasePoint(np.array([1.0, 2.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        PhasePoint(np.array([np.nan]), np.array([1.0]))
    p = PhasePoint.from_array(np.array([1.0, 2.0, 3.0, 4.0]))
    assert p.dim == 2
    assert np.array_equal(p.as_array(), [1, 2, 3, 4])


def test_domain_box_validation():
    with pytest.raises(ValueError):
        DomainBox(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
