"""Reference NumPy implementation of the dense-MLP derivative kernels.

All kernels operate on a stack of dense layers W[l] (out x in), b[l] (out,),
with the activation applied after every layer except the last. Inputs are
batched row-wise: U has shape (B, n0).

``potential_fused`` is the workhorse for scalar-output networks. In one pass
it produces, per row,

    V     = net(u)                      value
    G     = d net / d u                 input gradient (reverse sweep)
    Vdot  = G . w                       directional derivative along w
    Gdot  = (d^2 net / d u^2) w         Hessian-vector product along w

by propagating the input tangent w through both the forward and the reverse
sweep. ``potential_fused_backward`` differentiates that whole computation
with respect to the parameters (and the inputs), given adjoints for any
subset of (V, G, Vdot, Gdot). This needs the activation's third derivative.

``mlp_jvp`` is the vector-output variant without the reverse sweep (value and
JVP only), used by the unconstrained baseline flow network.

Layout of the fused computation, per hidden layer l (K hidden layers total;
layer K is the linear scalar output):

    A_l  = U_l W_l^T + b_l        Adot_l = T_l W_l^T
    U_l+1 = s(A_l)                T_l+1  = s'(A_l) * Adot_l
    V = U_K w_out + b_out         Vdot   = T_K w_out
    D_K = w_out (broadcast)       Ddot_K = 0
    Gam_l  = s'(A_l) * D_l+1
    Gamd_l = s''(A_l) * Adot_l * D_l+1 + s'(A_l) * Ddot_l+1
    D_l = Gam_l W_l               Ddot_l = Gamd_l W_l
    G = D_0                       Gdot   = Ddot_0

The backward pass reverses these statements in order (reverse sweep first,
then output layer, then forward sweep), accumulating parameter adjoints from
every matmul.
"""

import numpy as np

NAME = "numpy"

# activation codes shared with the compiled backend
ACT_TANH = 0
ACT_SIN = 1


def act_tables(act, A, order):
    """Return (s(A), s'(A), s''(A) or None, s'''(A) or None)."""
    if act == ACT_TANH:
        S = np.tanh(A)
        S1 = 1.0 - S * S
        S2 = -2.0 * S * S1 if order >= 2 else None
        S3 = S1 * (6.0 * S * S - 2.0) if order >= 3 else None
    elif act == ACT_SIN:
        S = np.sin(A)
        S1 = np.cos(A)
        S2 = -S if order >= 2 else None
        S3 = -S1 if order >= 3 else None
    else:
        raise ValueError(f"unknown activation code {act}")
    return S, S1, S2, S3


def mlp_forward(Ws, bs, act, U):
    """Plain forward pass; returns (B, n_out)."""
    X = U
    for l in range(len(Ws) - 1):
        X = act_tables(act, X @ Ws[l].T + bs[l], 1)[0]
    return X @ Ws[-1].T + bs[-1]


def potential_fused(Ws, bs, act, U, T=None, need_cache=False):
    """Fused value / input-gradient / tangent pass for a scalar-output MLP.

    Returns (V, G, Vdot, Gdot, cache). Vdot and Gdot are None when T is None;
    cache is None unless need_cache.
    """
    K = len(Ws) - 1
    tang = T is not None
    order = (3 if tang else 2) if need_cache else (2 if tang else 1)
    B = U.shape[0]

    Us = [U]
    Ts = [T] if tang else None
    Adots = []
    S1s, S2s, S3s = [], [], []
    for l in range(K):
        A = Us[l] @ Ws[l].T + bs[l]
        S, S1, S2, S3 = act_tables(act, A, order)
        Us.append(S)
        S1s.append(S1)
        S2s.append(S2)
        S3s.append(S3)
        if tang:
            Adot = Ts[l] @ Ws[l].T
            Adots.append(Adot)
            Ts.append(S1 * Adot)

    Wout = Ws[K]
    V = Us[K] @ Wout[0] + bs[K][0]
    Vdot = Ts[K] @ Wout[0] if tang else None

    Ds = [None] * (K + 1)
    Dds = [None] * (K + 1)
    Ds[K] = np.broadcast_to(Wout[0], (B, Wout.shape[1]))
    for l in range(K - 1, -1, -1):
        Gam = S1s[l] * Ds[l + 1]
        Ds[l] = Gam @ Ws[l]
        if tang:
            Gamd = S2s[l] * Adots[l] * Ds[l + 1]
            if Dds[l + 1] is not None:
                Gamd += S1s[l] * Dds[l + 1]
            Dds[l] = Gamd @ Ws[l]
    G = np.array(Ds[0]) if K == 0 else Ds[0]
    if tang:
        Gdot = Dds[0] if Dds[0] is not None else np.zeros_like(G)
    else:
        Gdot = None

    cache = None
    if need_cache:
        cache = (Ws, bs, act, Us, Ts, Adots, S1s, S2s, S3s, Ds, Dds, tang)
    return V, G, Vdot, Gdot, cache


def _acc(buf, idx, val):
    if buf[idx] is None:
        buf[idx] = val
    else:
        buf[idx] = buf[idx] + val


def potential_fused_backward(cache, vbar=None, gbar=None, vdotbar=None, gdotbar=None):
    """Parameter/input adjoints of potential_fused.

    Any of the four output adjoints may be None (treated as zero). Returns
    (dWs, dbs, Ubar, Tbar); Ubar/Tbar are None when nothing flows into them.
    """
    Ws, bs, act, Us, Ts, Adots, S1s, S2s, S3s, Ds, Dds, tang = cache
    K = len(Ws) - 1
    if not tang and (vdotbar is not None or gdotbar is not None):
        raise ValueError("tangent adjoints given but forward pass had no tangent")

    dWs = [np.zeros_like(W) for W in Ws]
    dbs = [np.zeros_like(b) for b in bs]
    Dbar = [None] * (K + 1)
    Ddbar = [None] * (K + 1)
    Abar = [None] * K
    Adbar = [None] * K
    Dbar[0] = gbar
    Ddbar[0] = gdotbar

    # reverse the reverse sweep (l ascending: D_0 statements were executed last)
    for l in range(K):
        Db = Dbar[l]
        Ddb = Ddbar[l]
        if Db is not None:
            Gam = S1s[l] * Ds[l + 1]
            Gambar = Db @ Ws[l].T
            dWs[l] += Gam.T @ Db
            _acc(Abar, l, Gambar * (S2s[l] * Ds[l + 1]))
            _acc(Dbar, l + 1, Gambar * S1s[l])
        if tang and Ddb is not None:
            Gamd = S2s[l] * Adots[l] * Ds[l + 1]
            if Dds[l + 1] is not None:
                Gamd = Gamd + S1s[l] * Dds[l + 1]
            Gamdbar = Ddb @ Ws[l].T
            dWs[l] += Gamd.T @ Ddb
            part = S3s[l] * Adots[l] * Ds[l + 1]
            if Dds[l + 1] is not None:
                part = part + S2s[l] * Dds[l + 1]
            _acc(Abar, l, Gamdbar * part)
            _acc(Adbar, l, Gamdbar * (S2s[l] * Ds[l + 1]))
            _acc(Dbar, l + 1, Gamdbar * (S2s[l] * Adots[l]))
            _acc(Ddbar, l + 1, Gamdbar * S1s[l])

    # D_K was the broadcast output-layer row; Ddot_K is constant zero
    if Dbar[K] is not None:
        dWs[K] += Dbar[K].sum(axis=0, keepdims=True)

    # output layer: V = U_K w + b, Vdot = T_K w
    Ubar = [None] * (K + 1)
    Tbar = [None] * (K + 1)
    if vbar is not None:
        dWs[K][0] += vbar @ Us[K]
        dbs[K][0] += vbar.sum()
        Ubar[K] = np.outer(vbar, Ws[K][0])
    if tang and vdotbar is not None:
        dWs[K][0] += vdotbar @ Ts[K]
        Tbar[K] = np.outer(vdotbar, Ws[K][0])

    # reverse the forward sweep (l descending)
    for l in range(K - 1, -1, -1):
        Ab = Abar[l]
        if Ubar[l + 1] is not None:
            Ab = _add(Ab, Ubar[l + 1] * S1s[l])
        Adb = Adbar[l] if tang else None
        if tang and Tbar[l + 1] is not None:
            Ab = _add(Ab, Tbar[l + 1] * (S2s[l] * Adots[l]))
            Adb = _add(Adb, Tbar[l + 1] * S1s[l])
        if tang and Adb is not None:
            dWs[l] += Adb.T @ Ts[l]
            Tbar[l] = Adb @ Ws[l]
        if Ab is not None:
            dWs[l] += Ab.T @ Us[l]
            dbs[l] += Ab.sum(axis=0)
            Ubar[l] = Ab @ Ws[l]
    return dWs, dbs, Ubar[0], (Tbar[0] if tang else None)


def _add(a, b):
    return b if a is None else a + b


def mlp_jvp(Ws, bs, act, U, T, need_cache=False):
    """Vector-output MLP forward pass with input tangent T.

    Returns (Y, Ydot, cache); Y and Ydot have shape (B, n_out).
    """
    K = len(Ws) - 1
    Us = [U]
    Ts = [T]
    Adots = []
    S1s, S2s = [], []
    order = 2 if need_cache else 1
    for l in range(K):
        A = Us[l] @ Ws[l].T + bs[l]
        S, S1, S2, _ = act_tables(act, A, order)
        Adot = Ts[l] @ Ws[l].T
        Us.append(S)
        Ts.append(S1 * Adot)
        Adots.append(Adot)
        S1s.append(S1)
        S2s.append(S2)
    Y = Us[K] @ Ws[K].T + bs[K]
    Ydot = Ts[K] @ Ws[K].T
    cache = (Ws, bs, act, Us, Ts, Adots, S1s, S2s) if need_cache else None
    return Y, Ydot, cache


def mlp_jvp_backward(cache, ybar=None, ydotbar=None):
    """Parameter/input adjoints of mlp_jvp."""
    Ws, bs, act, Us, Ts, Adots, S1s, S2s = cache
    K = len(Ws) - 1
    dWs = [np.zeros_like(W) for W in Ws]
    dbs = [np.zeros_like(b) for b in bs]
    Ub = None
    Tb = None
    if ybar is not None:
        dWs[K] += ybar.T @ Us[K]
        dbs[K] += ybar.sum(axis=0)
        Ub = ybar @ Ws[K]
    if ydotbar is not None:
        dWs[K] += ydotbar.T @ Ts[K]
        Tb = ydotbar @ Ws[K]
    for l in range(K - 1, -1, -1):
        Ab = None
        if Ub is not None:
            Ab = Ub * S1s[l]
        Adb = None
        if Tb is not None:
            Ab = _add(Ab, Tb * (S2s[l] * Adots[l]))
            Adb = Tb * S1s[l]
        if Adb is not None:
            dWs[l] += Adb.T @ Ts[l]
            Tb = Adb @ Ws[l]
        else:
            Tb = None
        if Ab is not None:
            dWs[l] += Ab.T @ Us[l]
            dbs[l] += Ab.sum(axis=0)
            Ub = Ab @ Ws[l]
        else:
            Ub = None
    return dWs, dbs, Ub, Tb
