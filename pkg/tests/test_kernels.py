"""Finite-difference oracles for the MLP derivative kernels, run against
every available backend, plus cross-backend parity."""

import numpy as np
import pytest

from sympflow import kernels

BACKENDS = kernels.available_backends()

SHAPES = [(3, (5, 4)), (2, (6,)), (4, ()), (2, (32, 32))]


def _random_net(rng, n_in, widths, n_out=1):
    sizes = [n_in, *widths, n_out]
    Ws = [
        np.ascontiguousarray(rng.normal(size=(o, i)) * 0.7)
        for i, o in zip(sizes[:-1], sizes[1:])
    ]
    bs = [rng.normal(size=o) * 0.3 for o in sizes[1:]]
    return Ws, bs


@pytest.mark.parametrize("backend", list(BACKENDS.values()), ids=list(BACKENDS))
@pytest.mark.parametrize("act", [0, 1])
@pytest.mark.parametrize("n_in,widths", SHAPES)
def test_gradient_and_tangent_match_fd(backend, act, n_in, widths):
    rng = np.random.default_rng(42 + n_in + act)
    Ws, bs = _random_net(rng, n_in, widths)
    B = 5
    U = rng.normal(size=(B, n_in))
    T = rng.normal(size=(B, n_in))
    V, G, Vdot, Gdot, _ = backend.potential_fused(Ws, bs, act, U, T)

    h = 1e-6
    val = lambda M: backend.potential_fused(Ws, bs, act, M)[0]
    grad = lambda M: backend.potential_fused(Ws, bs, act, M)[1]
    for i in range(n_in):
        e = np.zeros(n_in)
        e[i] = h
        fd = (val(U + e) - val(U - e)) / (2 * h)
        assert np.abs(G[:, i] - fd).max() < 1e-6 * (1 + np.abs(fd).max())
    fd_vdot = (val(U + h * T) - val(U - h * T)) / (2 * h)
    assert np.abs(Vdot - fd_vdot).max() < 1e-6 * (1 + np.abs(fd_vdot).max())
    fd_gdot = (grad(U + h * T) - grad(U - h * T)) / (2 * h)
    assert np.abs(Gdot - fd_gdot).max() < 1e-4 * (1 + np.abs(fd_gdot).max())


@pytest.mark.parametrize("backend", list(BACKENDS.values()), ids=list(BACKENDS))
@pytest.mark.parametrize("with_tangent", [True, False])
def test_parameter_adjoints_match_fd(backend, with_tangent):
    rng = np.random.default_rng(7)
    n_in = 3
    Ws, bs = _random_net(rng, n_in, (4, 3))
    B = 4
    U = rng.normal(size=(B, n_in))
    T = rng.normal(size=(B, n_in)) if with_tangent else None
    rv = rng.normal(size=B)
    rg = rng.normal(size=(B, n_in))
    rvd = rng.normal(size=B) if with_tangent else None
    rgd = rng.normal(size=(B, n_in)) if with_tangent else None

    out = backend.potential_fused(Ws, bs, 0, U, T, need_cache=True)
    dWs, dbs, Ubar, Tbar = backend.potential_fused_backward(out[4], rv, rg, rvd, rgd)

    def phi(Ws_, bs_, U_, T_):
        V, G, Vd, Gd, _ = backend.potential_fused(Ws_, bs_, 0, U_, T_)
        s = float((rv * V).sum() + (rg * G).sum())
        if with_tangent:
            s += float((rvd * Vd).sum() + (rgd * Gd).sum())
        return s

    h = 1e-6
    for l in range(len(Ws)):
        for idx in np.ndindex(Ws[l].shape):
            Wp = [w.copy() for w in Ws]
            Wm = [w.copy() for w in Ws]
            Wp[l][idx] += h
            Wm[l][idx] -= h
            fd = (phi(Wp, bs, U, T) - phi(Wm, bs, U, T)) / (2 * h)
            assert dWs[l][idx] == pytest.approx(fd, rel=1e-5, abs=1e-7)
        for i in range(bs[l].size):
            bp = [b.copy() for b in bs]
            bm = [b.copy() for b in bs]
            bp[l][i] += h
            bm[l][i] -= h
            fd = (phi(Ws, bp, U, T) - phi(Ws, bm, U, T)) / (2 * h)
            assert dbs[l][i] == pytest.approx(fd, rel=1e-5, abs=1e-7)
    for idx in np.ndindex(U.shape):
        Up, Um = U.copy(), U.copy()
        Up[idx] += h
        Um[idx] -= h
        fd = (phi(Ws, bs, Up, T) - phi(Ws, bs, Um, T)) / (2 * h)
        assert Ubar[idx] == pytest.approx(fd, rel=1e-5, abs=1e-7)
    if with_tangent:
        for idx in np.ndindex(T.shape):
            Tp, Tm = T.copy(), T.copy()
            Tp[idx] += h
            Tm[idx] -= h
            fd = (phi(Ws, bs, U, Tp) - phi(Ws, bs, U, Tm)) / (2 * h)
            assert Tbar[idx] == pytest.approx(fd, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("backend", list(BACKENDS.values()), ids=list(BACKENDS))
def test_jvp_kernel_matches_fd(backend):
    rng = np.random.default_rng(11)
    Ws, bs = _random_net(rng, 5, (8, 8), n_out=4)
    B = 6
    U = rng.normal(size=(B, 5))
    T = rng.normal(size=(B, 5))
    Y, Ydot, cache = backend.mlp_jvp(Ws, bs, 0, U, T, need_cache=True)
    assert np.allclose(Y, backend.mlp_forward(Ws, bs, 0, U))
    h = 1e-6
    fd = (backend.mlp_forward(Ws, bs, 0, U + h * T) - backend.mlp_forward(Ws, bs, 0, U - h * T)) / (2 * h)
    assert np.abs(Ydot - fd).max() < 1e-6 * (1 + np.abs(fd).max())

    ry = rng.normal(size=Y.shape)
    ryd = rng.normal(size=Y.shape)
    dWs, dbs, _, _ = backend.mlp_jvp_backward(cache, ry, ryd)

    def phi(Ws_, bs_):
        Y_, Yd_, _ = backend.mlp_jvp(Ws_, bs_, 0, U, T)
        return float((ry * Y_).sum() + (ryd * Yd_).sum())

    for l in range(len(Ws)):
        for idx in list(np.ndindex(Ws[l].shape))[::7]:
            Wp = [w.copy() for w in Ws]
            Wm = [w.copy() for w in Ws]
            Wp[l][idx] += h
            Wm[l][idx] -= h
            fd = (phi(Wp, bs) - phi(Wm, bs)) / (2 * h)
            assert dWs[l][idx] == pytest.approx(fd, rel=1e-5, abs=1e-7)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
@pytest.mark.parametrize("act", [0, 1])
def test_backends_agree(act):
    np_b = BACKENDS["numpy"]
    cy_b = BACKENDS["cython"]
    rng = np.random.default_rng(3)
    Ws, bs = _random_net(rng, 3, (7, 5))
    B = 9
    U = rng.normal(size=(B, 3))
    T = rng.normal(size=(B, 3))
    r1 = np_b.potential_fused(Ws, bs, act, U, T, need_cache=True)
    r2 = cy_b.potential_fused(Ws, bs, act, U, T, need_cache=True)
    for a, b in zip(r1[:4], r2[:4]):
        assert np.allclose(a, b, rtol=1e-13, atol=1e-13)
    seeds = (rng.normal(size=B), rng.normal(size=(B, 3)), rng.normal(size=B), rng.normal(size=(B, 3)))
    g1 = np_b.potential_fused_backward(r1[4], *seeds)
    g2 = cy_b.potential_fused_backward(r2[4], *seeds)
    for a, b in zip(g1[0] + g1[1], g2[0] + g2[1]):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-13)
    assert np.allclose(g1[2], g2[2], atol=1e-13)
    assert np.allclose(g1[3], g2[3], atol=1e-13)


@pytest.mark.parametrize("backend", list(BACKENDS.values()), ids=list(BACKENDS))
def test_deterministic_reevaluation(backend):
    rng = np.random.default_rng(0)
    Ws, bs = _random_net(rng, 2, (16, 16))
    U = rng.normal(size=(8, 2))
    T = rng.normal(size=(8, 2))
    a = backend.potential_fused(Ws, bs, 0, U, T)
    b = backend.potential_fused(Ws, bs, 0, U, T)
    for x, y in zip(a[:4], b[:4]):
        assert np.array_equal(x, y)
