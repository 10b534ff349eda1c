"""Pure numpy implementation of the ORCA hot loop.

Arrays follow the ``OrcaTerms`` layout; components are stored CSR-style
(``comp_ptr``, ``comp_idx``, ``comp_w``) over the adversary points.
"""

from __future__ import annotations

import numpy as np


def _softmax(theta):
    z = np.exp(theta - theta.max())
    return z / z.sum()


def _comp_matrix(comp_ptr, comp_idx, comp_w, P):
    K = comp_ptr.size - 1
    W = np.zeros((K, P))
    for k in range(K):
        s, e = comp_ptr[k], comp_ptr[k + 1]
        np.add.at(W[k], comp_idx[s:e], comp_w[s:e])
    return W


def point_values(m, H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0):
    """Unsmoothed per-point values G_p(m)."""
    val = m @ H @ m + L @ m + c0
    if qlev.size:
        F = C @ m
        val = val + qsuf[np.searchsorted(qlev, F, side="left")]
    if gU.shape[0]:
        g = int(np.argmax(gU @ m))
        val = val + gV[g] @ m + gv0[:, g]
    return val


def true_components(m, H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0, comp_ptr, comp_idx, comp_w):
    G = point_values(m, H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0)
    return _comp_matrix(comp_ptr, comp_idx, comp_w, G.size) @ G


def smoothed_objective(theta, H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0, comp_ptr, comp_idx, comp_w, tau, lse_temp):
    """Value and theta-gradient of the smoothed worst-case objective."""
    theta = np.asarray(theta, dtype=float)
    m = _softmax(theta)
    P = c0.size
    Hm = (H + H.T) @ m
    S = m @ H @ m + L @ m + c0
    dSdF = np.zeros(P)
    if qlev.size:
        F = C @ m
        z = (qlev[None, :] - F[:, None]) / tau
        sig = 0.5 * (1.0 + np.tanh(0.5 * z))
        S = S + sig @ qw
        dSdF = -(sig * (1.0 - sig)) @ qw / tau
    if gU.shape[0]:
        s = gU @ m
        e = np.exp((s - s.max()) / tau)
        gam = e / e.sum()
        vals = gV @ m + gv0  # (P, G)
        vbar = vals @ gam
        S = S + vbar
    W = _comp_matrix(comp_ptr, comp_idx, comp_w, P)
    sk = W @ S
    top = sk.max()
    r = np.exp((sk - top) / lse_temp)
    J = top + lse_temp * np.log(r.sum())
    r /= r.sum()
    a = r @ W  # dJ/dS_p
    asum = a.sum()
    gm = asum * Hm + a @ L
    if qlev.size:
        gm = gm + (a * dSdF) @ C
    if gU.shape[0]:
        gm = gm + asum * (gam @ gV)
        coef = ((vals - vbar[:, None]) * gam[None, :]).T @ a / tau  # (G,)
        gm = gm + coef @ gU
    g_theta = m * (gm - m @ gm)
    return float(J), g_theta


def orca_descent(
    theta0, H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0, comp_ptr, comp_idx, comp_w,
    tau, lse_temp, steps, lr, beta1, beta2, eps, stop_below,
):
    """Adam on the smoothed objective, keeping the best iterate under the true objective.

    Returns ``(best_theta, best_value, init_value, iterations, halvings)``.
    """
    theta = np.array(theta0, dtype=float)
    n = theta.size
    mom1 = np.zeros(n)
    mom2 = np.zeros(n)
    args = (H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0, comp_ptr, comp_idx, comp_w)
    best_theta = theta.copy()
    best_val = np.inf
    init_val = np.nan
    halvings = 0
    it = 0
    b1t = 1.0
    b2t = 1.0
    while True:
        m = _softmax(theta)
        val = float(np.max(true_components(m, *args)))
        if it == 0:
            init_val = val
        if val < best_val:
            best_val = val
            best_theta = theta.copy()
        if best_val < stop_below or it >= steps:
            break
        _, g = smoothed_objective(theta, *args, tau, lse_temp)
        if not np.all(np.isfinite(g)):
            halvings += 1
            if halvings > 5:
                break
            lr *= 0.5
            theta = best_theta.copy()
            mom1[:] = 0.0
            mom2[:] = 0.0
            b1t = 1.0
            b2t = 1.0
            it += 1
            continue
        if not np.any(g):
            break
        b1t *= beta1
        b2t *= beta2
        mom1 = beta1 * mom1 + (1.0 - beta1) * g
        mom2 = beta2 * mom2 + (1.0 - beta2) * g * g
        mhat = mom1 / (1.0 - b1t)
        vhat = mom2 / (1.0 - b2t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        it += 1
    return best_theta, best_val, init_val, it, halvings
