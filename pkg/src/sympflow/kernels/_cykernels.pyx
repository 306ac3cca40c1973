# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementation of the dense-MLP derivative kernels.

Same contracts and cache layout as ``_numpy_backend`` (which documents the
scheme); matmuls go through BLAS dgemm and the elementwise chains are fused
loops. Adjoints that the NumPy backend returns as None may come back here as
explicit zero arrays.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "cython"

ACT_TANH = 0
ACT_SIN = 1

ctypedef double[:, ::1] mat


# ---------------------------------------------------------------------------
# BLAS helpers (all row-major)
# ---------------------------------------------------------------------------


cdef void _gemm_ab(mat A, mat B, mat C, double beta) noexcept nogil:
    # C (m,n) = A (m,k) @ B (k,n) + beta C
    cdef int m = A.shape[0], k = A.shape[1], n = B.shape[1]
    cdef double alpha = 1.0
    cdef char* N = b"N"
    dgemm(N, N, &n, &m, &k, &alpha, &B[0, 0], &n, &A[0, 0], &k, &beta, &C[0, 0], &n)


cdef void _gemm_abt(mat A, mat B, mat C, double beta) noexcept nogil:
    # C (m,n) = A (m,k) @ B (n,k)^T + beta C
    cdef int m = A.shape[0], k = A.shape[1], n = B.shape[0]
    cdef double alpha = 1.0
    cdef char* T = b"T"
    cdef char* N = b"N"
    dgemm(T, N, &n, &m, &k, &alpha, &B[0, 0], &k, &A[0, 0], &k, &beta, &C[0, 0], &n)


cdef void _gemm_atb(mat A, mat B, mat C, double beta) noexcept nogil:
    # C (m,n) = A (k,m)^T @ B (k,n) + beta C
    cdef int k = A.shape[0], m = A.shape[1], n = B.shape[1]
    cdef double alpha = 1.0
    cdef char* T = b"T"
    cdef char* N = b"N"
    dgemm(N, T, &n, &m, &k, &alpha, &B[0, 0], &n, &A[0, 0], &m, &beta, &C[0, 0], &n)


# ---------------------------------------------------------------------------
# fused elementwise helpers
# ---------------------------------------------------------------------------


cdef void _tanh_tables(int order, mat S, mat S1, mat S2, mat S3) noexcept nogil:
    # derivative tables are polynomial in s = tanh(a)
    cdef Py_ssize_t i, j
    cdef double s, s1
    for i in range(S.shape[0]):
        for j in range(S.shape[1]):
            s = S[i, j]
            s1 = 1.0 - s * s
            S1[i, j] = s1
            if order >= 2:
                S2[i, j] = -2.0 * s * s1
            if order >= 3:
                S3[i, j] = s1 * (6.0 * s * s - 2.0)


def _act_tables(int act, cnp.ndarray A, int order):
    # transcendentals through NumPy's SIMD loops; tables via fused passes
    cdef cnp.ndarray S, S1, S2 = None, S3 = None
    if act == 0:
        S = np.tanh(A)
        S1 = np.empty_like(S)
        if order >= 2:
            S2 = np.empty_like(S)
        if order >= 3:
            S3 = np.empty_like(S)
        _tanh_tables(order, S, S1,
                     S2 if S2 is not None else S1, S3 if S3 is not None else S1)
    elif act == 1:
        S = np.sin(A)
        S1 = np.cos(A)
        if order >= 2:
            S2 = -S
        if order >= 3:
            S3 = -S1
    else:
        raise ValueError(f"unknown activation code {act}")
    return S, S1, S2, S3


cdef void _vmul2(mat O, mat A, mat B, bint acc) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(O.shape[0]):
        for j in range(O.shape[1]):
            if acc:
                O[i, j] += A[i, j] * B[i, j]
            else:
                O[i, j] = A[i, j] * B[i, j]


cdef void _vmul3(mat O, mat A, mat B, mat C, bint acc) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(O.shape[0]):
        for j in range(O.shape[1]):
            if acc:
                O[i, j] += A[i, j] * B[i, j] * C[i, j]
            else:
                O[i, j] = A[i, j] * B[i, j] * C[i, j]


cdef void _vmul4_acc(mat O, mat A, mat B, mat C, mat D) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(O.shape[0]):
        for j in range(O.shape[1]):
            O[i, j] += A[i, j] * B[i, j] * C[i, j] * D[i, j]


cdef void _col_sum_acc(double[::1] out, mat A) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            out[j] += A[i, j]


cdef void _out_head(mat X, double[::1] w, double b0, double[::1] out) noexcept nogil:
    # out = X @ w + b0
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(X.shape[0]):
        s = b0
        for j in range(X.shape[1]):
            s += X[i, j] * w[j]
        out[i] = s


cdef void _outer_acc(double[::1] u, double[::1] w, mat O) noexcept nogil:
    # O += outer(u, w)
    cdef Py_ssize_t i, j
    for i in range(O.shape[0]):
        for j in range(O.shape[1]):
            O[i, j] += u[i] * w[j]


cdef void _vec_mat_acc(double[::1] u, mat X, double[::1] out) noexcept nogil:
    # out (n,) += u (B,) @ X (B,n)
    cdef Py_ssize_t i, j
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            out[j] += u[i] * X[i, j]


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def mlp_forward(list Ws, list bs, int act, U_obj):
    cdef cnp.ndarray X = np.ascontiguousarray(U_obj, dtype=np.float64)
    cdef Py_ssize_t K = len(Ws) - 1
    cdef Py_ssize_t l, B = X.shape[0]
    cdef cnp.ndarray A
    for l in range(K):
        W = Ws[l]
        A = np.empty((B, W.shape[0]))
        _gemm_abt(X, W, A, 0.0)
        A += np.asarray(bs[l])
        X = np.tanh(A) if act == 0 else np.sin(A)
    W = Ws[K]
    A = np.empty((B, W.shape[0]))
    _gemm_abt(X, W, A, 0.0)
    A += np.asarray(bs[K])
    return A


def potential_fused(list Ws, list bs, int act, U_obj, T_obj=None, bint need_cache=False):
    cdef cnp.ndarray U = np.ascontiguousarray(U_obj, dtype=np.float64)
    cdef bint tang = T_obj is not None
    cdef int order = (3 if tang else 2) if need_cache else (2 if tang else 1)
    cdef Py_ssize_t K = len(Ws) - 1
    cdef Py_ssize_t B = U.shape[0]
    cdef Py_ssize_t l

    Us = [U]
    Ts = [np.ascontiguousarray(T_obj, dtype=np.float64)] if tang else None
    Adots = []
    S1s, S2s, S3s = [], [], []
    cdef cnp.ndarray A, Adot, Tn
    for l in range(K):
        W = Ws[l]
        n = W.shape[0]
        A = np.empty((B, n))
        _gemm_abt(Us[l], W, A, 0.0)
        A += np.asarray(bs[l])
        S, S1, S2, S3 = _act_tables(act, A, order)
        Us.append(S)
        S1s.append(S1)
        S2s.append(S2)
        S3s.append(S3)
        if tang:
            Adot = np.empty((B, n))
            _gemm_abt(Ts[l], W, Adot, 0.0)
            Adots.append(Adot)
            Tn = np.empty((B, n))
            _vmul2(Tn, S1, Adot, 0)
            Ts.append(Tn)

    Wout = np.asarray(Ws[K])
    wrow = Wout[0]
    cdef cnp.ndarray V = np.empty(B)
    _out_head(Us[K], wrow, float(np.asarray(bs[K])[0]), V)
    cdef cnp.ndarray Vdot = None
    if tang:
        Vdot = np.empty(B)
        _out_head(Ts[K], wrow, 0.0, Vdot)

    Ds = [None] * (K + 1)
    Dds = [None] * (K + 1)
    DK = np.empty((B, Wout.shape[1]))
    DK[:] = wrow
    Ds[K] = DK
    cdef cnp.ndarray Gam, Gamd, Dn, Ddn
    for l in range(K - 1, -1, -1):
        W = Ws[l]
        n = W.shape[0]
        Gam = np.empty((B, n))
        _vmul2(Gam, S1s[l], Ds[l + 1], 0)
        Dn = np.empty((B, W.shape[1]))
        _gemm_ab(Gam, W, Dn, 0.0)
        Ds[l] = Dn
        if tang:
            Gamd = np.empty((B, n))
            _vmul3(Gamd, S2s[l], Adots[l], Ds[l + 1], 0)
            if Dds[l + 1] is not None:
                _vmul2(Gamd, S1s[l], Dds[l + 1], 1)
            Ddn = np.empty((B, W.shape[1]))
            _gemm_ab(Gamd, W, Ddn, 0.0)
            Dds[l] = Ddn
    G = Ds[0]
    Gdot = None
    if tang:
        Gdot = Dds[0] if Dds[0] is not None else np.zeros_like(G)

    cache = None
    if need_cache:
        cache = (Ws, bs, act, Us, Ts, Adots, S1s, S2s, S3s, Ds, Dds, tang)
    return V, G, Vdot, Gdot, cache


def potential_fused_backward(tuple cache, vbar=None, gbar=None, vdotbar=None, gdotbar=None):
    Ws, bs, act, Us, Ts, Adots, S1s, S2s, S3s, Ds, Dds, tang = cache
    if not tang and (vdotbar is not None or gdotbar is not None):
        raise ValueError("tangent adjoints given but forward pass had no tangent")
    cdef Py_ssize_t K = len(Ws) - 1
    cdef Py_ssize_t B = (<cnp.ndarray> Us[0]).shape[0]
    cdef Py_ssize_t n0 = (<cnp.ndarray> Us[0]).shape[1]
    cdef Py_ssize_t l

    dWs = [np.zeros_like(np.asarray(W)) for W in Ws]
    dbs = [np.zeros_like(np.asarray(b)) for b in bs]

    cdef bint hD = gbar is not None
    cdef bint hDd = tang and gdotbar is not None
    Dbar = [None] * (K + 1)
    Ddbar = [None] * (K + 1)
    Abar = [None] * K
    Adbar = [None] * K
    if hD:
        Dbar[0] = np.ascontiguousarray(gbar, dtype=np.float64)
    if hDd:
        Ddbar[0] = np.ascontiguousarray(gdotbar, dtype=np.float64)

    cdef cnp.ndarray Gam, Gamd, Gambar, Gamdbar, tmp, Ab, Adb
    for l in range(K):
        W = Ws[l]
        n = W.shape[0]
        Db = Dbar[l]
        Ddb = Ddbar[l]
        if Db is not None:
            Gam = np.empty((B, n))
            _vmul2(Gam, S1s[l], Ds[l + 1], 0)
            Gambar = np.empty((B, n))
            _gemm_abt(Db, W, Gambar, 0.0)
            _gemm_atb(Gam, Db, dWs[l], 1.0)
            _ensure(Abar, l, B, n)
            _vmul3(Abar[l], Gambar, S2s[l], Ds[l + 1], 1)
            _ensure(Dbar, l + 1, B, n)
            _vmul2(Dbar[l + 1], Gambar, S1s[l], 1)
        if Ddb is not None:
            Gamd = np.empty((B, n))
            _vmul3(Gamd, S2s[l], Adots[l], Ds[l + 1], 0)
            if Dds[l + 1] is not None:
                _vmul2(Gamd, S1s[l], Dds[l + 1], 1)
            Gamdbar = np.empty((B, n))
            _gemm_abt(Ddb, W, Gamdbar, 0.0)
            _gemm_atb(Gamd, Ddb, dWs[l], 1.0)
            _ensure(Abar, l, B, n)
            _vmul4_acc(Abar[l], Gamdbar, S3s[l], Adots[l], Ds[l + 1])
            if Dds[l + 1] is not None:
                _vmul3(Abar[l], Gamdbar, S2s[l], Dds[l + 1], 1)
            _ensure(Adbar, l, B, n)
            _vmul3(Adbar[l], Gamdbar, S2s[l], Ds[l + 1], 1)
            _ensure(Dbar, l + 1, B, n)
            _vmul3(Dbar[l + 1], Gamdbar, S2s[l], Adots[l], 1)
            _ensure(Ddbar, l + 1, B, n)
            _vmul2(Ddbar[l + 1], Gamdbar, S1s[l], 1)

    if Dbar[K] is not None:
        _col_sum_acc(dWs[K][0], Dbar[K])

    Ubar = [None] * (K + 1)
    Tbar = [None] * (K + 1)
    wrow = np.asarray(Ws[K])[0]
    cdef cnp.ndarray vb, vdb
    if vbar is not None:
        vb = np.ascontiguousarray(vbar, dtype=np.float64)
        _vec_mat_acc(vb, Us[K], dWs[K][0])
        dbs[K][0] += vb.sum()
        Ubar[K] = np.zeros((B, len(wrow)))
        _outer_acc(vb, wrow, Ubar[K])
    if tang and vdotbar is not None:
        vdb = np.ascontiguousarray(vdotbar, dtype=np.float64)
        _vec_mat_acc(vdb, Ts[K], dWs[K][0])
        Tbar[K] = np.zeros((B, len(wrow)))
        _outer_acc(vdb, wrow, Tbar[K])

    for l in range(K - 1, -1, -1):
        W = Ws[l]
        n = W.shape[0]
        Ab = Abar[l]
        if Ubar[l + 1] is not None:
            if Ab is None:
                Ab = np.empty((B, n))
                _vmul2(Ab, Ubar[l + 1], S1s[l], 0)
            else:
                _vmul2(Ab, Ubar[l + 1], S1s[l], 1)
        Adb = Adbar[l] if tang else None
        if tang and Tbar[l + 1] is not None:
            if Ab is None:
                Ab = np.empty((B, n))
                _vmul3(Ab, Tbar[l + 1], S2s[l], Adots[l], 0)
            else:
                _vmul3(Ab, Tbar[l + 1], S2s[l], Adots[l], 1)
            if Adb is None:
                Adb = np.empty((B, n))
                _vmul2(Adb, Tbar[l + 1], S1s[l], 0)
            else:
                _vmul2(Adb, Tbar[l + 1], S1s[l], 1)
        if tang and Adb is not None:
            _gemm_atb(Adb, Ts[l], dWs[l], 1.0)
            Tbar[l] = np.empty((B, W.shape[1]))
            _gemm_ab(Adb, W, Tbar[l], 0.0)
        if Ab is not None:
            _gemm_atb(Ab, Us[l], dWs[l], 1.0)
            _col_sum_acc(dbs[l], Ab)
            Ubar[l] = np.empty((B, W.shape[1]))
            _gemm_ab(Ab, W, Ubar[l], 0.0)
    return dWs, dbs, Ubar[0], (Tbar[0] if tang else None)


def _ensure(list buf, Py_ssize_t idx, Py_ssize_t B, Py_ssize_t n):
    if buf[idx] is None:
        buf[idx] = np.zeros((B, n))


def mlp_jvp(list Ws, list bs, int act, U_obj, T_obj, bint need_cache=False):
    cdef cnp.ndarray U = np.ascontiguousarray(U_obj, dtype=np.float64)
    cdef cnp.ndarray T = np.ascontiguousarray(T_obj, dtype=np.float64)
    cdef Py_ssize_t K = len(Ws) - 1
    cdef Py_ssize_t B = U.shape[0]
    cdef Py_ssize_t l
    cdef int order = 2 if need_cache else 1
    Us = [U]
    Ts = [T]
    Adots = []
    S1s, S2s = [], []
    cdef cnp.ndarray A, Adot, Tn
    for l in range(K):
        W = Ws[l]
        n = W.shape[0]
        A = np.empty((B, n))
        _gemm_abt(Us[l], W, A, 0.0)
        A += np.asarray(bs[l])
        S, S1, S2, _ = _act_tables(act, A, order)
        Adot = np.empty((B, n))
        _gemm_abt(Ts[l], W, Adot, 0.0)
        Tn = np.empty((B, n))
        _vmul2(Tn, S1, Adot, 0)
        Us.append(S)
        Ts.append(Tn)
        Adots.append(Adot)
        S1s.append(S1)
        S2s.append(S2)
    W = Ws[K]
    cdef cnp.ndarray Y = np.empty((B, W.shape[0]))
    _gemm_abt(Us[K], W, Y, 0.0)
    Y += np.asarray(bs[K])
    cdef cnp.ndarray Ydot = np.empty((B, W.shape[0]))
    _gemm_abt(Ts[K], W, Ydot, 0.0)
    cache = (Ws, bs, act, Us, Ts, Adots, S1s, S2s) if need_cache else None
    return Y, Ydot, cache


def mlp_jvp_backward(tuple cache, ybar=None, ydotbar=None):
    Ws, bs, act, Us, Ts, Adots, S1s, S2s = cache
    cdef Py_ssize_t K = len(Ws) - 1
    cdef Py_ssize_t B = (<cnp.ndarray> Us[0]).shape[0]
    cdef Py_ssize_t l
    dWs = [np.zeros_like(np.asarray(W)) for W in Ws]
    dbs = [np.zeros_like(np.asarray(b)) for b in bs]
    Ub = None
    Tb = None
    cdef cnp.ndarray yb, ydb, Ab, Adb
    if ybar is not None:
        yb = np.ascontiguousarray(ybar, dtype=np.float64)
        _gemm_atb(yb, Us[K], dWs[K], 1.0)
        dbs[K] += yb.sum(axis=0)
        Ub = np.empty((B, np.asarray(Ws[K]).shape[1]))
        _gemm_ab(yb, Ws[K], Ub, 0.0)
    if ydotbar is not None:
        ydb = np.ascontiguousarray(ydotbar, dtype=np.float64)
        _gemm_atb(ydb, Ts[K], dWs[K], 1.0)
        Tb = np.empty((B, np.asarray(Ws[K]).shape[1]))
        _gemm_ab(ydb, Ws[K], Tb, 0.0)
    for l in range(K - 1, -1, -1):
        W = Ws[l]
        n = W.shape[0]
        Ab = None
        Adb = None
        if Ub is not None:
            Ab = np.empty((B, n))
            _vmul2(Ab, Ub, S1s[l], 0)
        if Tb is not None:
            if Ab is None:
                Ab = np.empty((B, n))
                _vmul3(Ab, Tb, S2s[l], Adots[l], 0)
            else:
                _vmul3(Ab, Tb, S2s[l], Adots[l], 1)
            Adb = np.empty((B, n))
            _vmul2(Adb, Tb, S1s[l], 0)
        if Adb is not None:
            _gemm_atb(Adb, Ts[l], dWs[l], 1.0)
            Tb = np.empty((B, W.shape[1]))
            _gemm_ab(Adb, W, Tb, 0.0)
        else:
            Tb = None
        if Ab is not None:
            _gemm_atb(Ab, Us[l], dWs[l], 1.0)
            _col_sum_acc(dbs[l], Ab)
            Ub = np.empty((B, W.shape[1]))
            _gemm_ab(Ab, W, Ub, 0.0)
        else:
            Ub = None
    return dWs, dbs, Ub, Tb
