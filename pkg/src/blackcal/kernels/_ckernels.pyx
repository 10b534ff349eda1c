# cython: language_level=3
"""Compiled ORCA hot loop; mirrors ``_fallback`` numerically."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, isfinite, INFINITY

cnp.import_array()

cdef double SAT = 37.0  # exp(-37) < 2**-53: the logistic is saturated beyond


cdef inline Py_ssize_t _lower_bound(const double[::1] a, Py_ssize_t n, double x) noexcept nogil:
    # first index with a[i] >= x
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef inline Py_ssize_t _upper_bound(const double[::1] a, Py_ssize_t n, double x) noexcept nogil:
    # first index with a[i] > x
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef void _softmax(const double[::1] theta, double[::1] m) noexcept nogil:
    cdef Py_ssize_t i, n = theta.shape[0]
    cdef double top = theta[0], s = 0.0
    for i in range(1, n):
        if theta[i] > top:
            top = theta[i]
    for i in range(n):
        m[i] = exp(theta[i] - top)
        s += m[i]
    for i in range(n):
        m[i] /= s


cdef class _Problem:
    cdef const double[:, ::1] H
    cdef const double[:, ::1] L
    cdef const double[::1] c0
    cdef const double[:, ::1] C
    cdef const double[::1] qlev
    cdef const double[::1] qw
    cdef const double[::1] qsuf
    cdef const double[:, ::1] gU
    cdef const double[:, ::1] gV
    cdef const double[:, ::1] gv0
    cdef const long[::1] comp_ptr
    cdef const long[::1] comp_idx
    cdef const double[::1] comp_w
    cdef Py_ssize_t n, P, Q, G, K
    # scratch
    cdef double[::1] Hm, Lm, F, S, dSdF, a, gm, sk, gs, gam, gvm, vbar, rgap
    cdef double rgap_tau

    def __init__(self, H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0, comp_ptr, comp_idx, comp_w):
        self.H = H
        self.L = L
        self.c0 = c0
        self.C = C
        self.qlev = qlev
        self.qw = qw
        self.qsuf = qsuf
        self.gU = gU
        self.gV = gV
        self.gv0 = gv0
        self.comp_ptr = comp_ptr
        self.comp_idx = comp_idx
        self.comp_w = comp_w
        self.n = H.shape[0]
        self.P = c0.shape[0]
        self.Q = qlev.shape[0]
        self.G = gU.shape[0]
        self.K = comp_ptr.shape[0] - 1
        self.Hm = np.zeros(self.n)
        self.Lm = np.zeros(self.P)
        self.F = np.zeros(self.P)
        self.S = np.zeros(self.P)
        self.dSdF = np.zeros(self.P)
        self.a = np.zeros(self.P)
        self.gm = np.zeros(self.n)
        self.sk = np.zeros(self.K)
        self.gs = np.zeros(max(self.G, 1))
        self.gam = np.zeros(max(self.G, 1))
        self.gvm = np.zeros(max(self.G, 1))
        self.vbar = np.zeros(self.P)
        self.rgap = np.zeros(max(self.Q, 1))
        self.rgap_tau = -1.0

    cdef void _set_tau(self, double tau) noexcept nogil:
        # exp(-(a[q+1] - a[q]) / tau): lets the logistic terms share one exp per point
        cdef Py_ssize_t q
        if tau == self.rgap_tau:
            return
        for q in range(self.Q - 1):
            self.rgap[q] = exp(-(self.qlev[q + 1] - self.qlev[q]) / tau)
        self.rgap_tau = tau

    cdef double _shared(self, const double[::1] m) noexcept nogil:
        """Fill Hm, Lm, F; return m.H.m."""
        cdef Py_ssize_t i, j, p
        cdef double acc, quad = 0.0
        for i in range(self.n):
            acc = 0.0
            for j in range(self.n):
                acc += (self.H[i, j] + self.H[j, i]) * m[j]
            self.Hm[i] = acc
            quad += 0.5 * acc * m[i]
        for p in range(self.P):
            acc = 0.0
            for j in range(self.n):
                acc += self.L[p, j] * m[j]
            self.Lm[p] = acc
        if self.Q > 0:
            for p in range(self.P):
                acc = 0.0
                for j in range(self.n):
                    acc += self.C[p, j] * m[j]
                self.F[p] = acc
        return quad

    cdef Py_ssize_t _gates(self, const double[::1] m) noexcept nogil:
        """Fill gs = gU.m and gvm = gV.m; return argmax gate."""
        cdef Py_ssize_t g, j, best = 0
        cdef double acc
        for g in range(self.G):
            acc = 0.0
            for j in range(self.n):
                acc += self.gU[g, j] * m[j]
            self.gs[g] = acc
            acc = 0.0
            for j in range(self.n):
                acc += self.gV[g, j] * m[j]
            self.gvm[g] = acc
            if self.gs[g] > self.gs[best]:
                best = g
        return best

    cdef double true_max(self, const double[::1] m) noexcept nogil:
        cdef double quad = self._shared(m)
        cdef Py_ssize_t p, k, q, gbest = 0
        cdef double v, best = -INFINITY
        if self.G > 0:
            gbest = self._gates(m)
        for p in range(self.P):
            v = quad + self.Lm[p] + self.c0[p]
            if self.Q > 0:
                v += self.qsuf[_lower_bound(self.qlev, self.Q, self.F[p])]
            if self.G > 0:
                v += self.gvm[gbest] + self.gv0[p, gbest]
            self.S[p] = v
        for k in range(self.K):
            v = 0.0
            for q in range(self.comp_ptr[k], self.comp_ptr[k + 1]):
                v += self.comp_w[q] * self.S[self.comp_idx[q]]
            self.sk[k] = v
            if v > best:
                best = v
        return best

    cdef double smoothed(self, const double[::1] m, double tau, double lse_temp, double[::1] gtheta) noexcept nogil:
        cdef double quad = self._shared(m)
        cdef Py_ssize_t p, k, q, j, g, lo, hi
        cdef double v, E, sg, d, top, tot, asum, acc, gtop, gsum, coef, mg
        self._set_tau(tau)
        # gates
        if self.G > 0:
            self._gates(m)
            gtop = self.gs[0]
            for g in range(1, self.G):
                if self.gs[g] > gtop:
                    gtop = self.gs[g]
            gsum = 0.0
            for g in range(self.G):
                self.gam[g] = exp((self.gs[g] - gtop) / tau)
                gsum += self.gam[g]
            for g in range(self.G):
                self.gam[g] /= gsum
        for p in range(self.P):
            v = quad + self.Lm[p] + self.c0[p]
            d = 0.0
            if self.Q > 0:
                lo = _lower_bound(self.qlev, self.Q, self.F[p] - SAT * tau)
                hi = _upper_bound(self.qlev, self.Q, self.F[p] + SAT * tau)
                v += self.qsuf[hi]
                if lo < hi:
                    # E = exp(-z) with z = (a_q - F) / tau, advanced by the gap ratios
                    E = exp((self.F[p] - self.qlev[lo]) / tau)
                    for q in range(lo, hi):
                        sg = 1.0 / (1.0 + E)
                        v += self.qw[q] * sg
                        d -= self.qw[q] * sg * sg * E
                        if q + 1 < hi:
                            E *= self.rgap[q]
                d /= tau
            self.dSdF[p] = d
            if self.G > 0:
                acc = 0.0
                for g in range(self.G):
                    acc += self.gam[g] * (self.gvm[g] + self.gv0[p, g])
                self.vbar[p] = acc
                v += acc
            self.S[p] = v
        # components and log-sum-exp
        top = -INFINITY
        for k in range(self.K):
            v = 0.0
            for q in range(self.comp_ptr[k], self.comp_ptr[k + 1]):
                v += self.comp_w[q] * self.S[self.comp_idx[q]]
            self.sk[k] = v
            if v > top:
                top = v
        tot = 0.0
        for k in range(self.K):
            self.sk[k] = exp((self.sk[k] - top) / lse_temp)
            tot += self.sk[k]
        for p in range(self.P):
            self.a[p] = 0.0
        for k in range(self.K):
            for q in range(self.comp_ptr[k], self.comp_ptr[k + 1]):
                self.a[self.comp_idx[q]] += self.comp_w[q] * self.sk[k] / tot
        # gradient in m
        asum = 0.0
        for p in range(self.P):
            asum += self.a[p]
        for j in range(self.n):
            self.gm[j] = asum * self.Hm[j]
        for p in range(self.P):
            if self.a[p] == 0.0:
                continue
            acc = self.a[p]
            for j in range(self.n):
                self.gm[j] += acc * self.L[p, j]
            if self.Q > 0 and self.dSdF[p] != 0.0:
                acc = self.a[p] * self.dSdF[p]
                for j in range(self.n):
                    self.gm[j] += acc * self.C[p, j]
        if self.G > 0:
            for g in range(self.G):
                coef = 0.0
                for p in range(self.P):
                    coef += self.a[p] * (self.gvm[g] + self.gv0[p, g] - self.vbar[p])
                coef *= self.gam[g] / tau
                for j in range(self.n):
                    self.gm[j] += asum * self.gam[g] * self.gV[g, j] + coef * self.gU[g, j]
        mg = 0.0
        for j in range(self.n):
            mg += m[j] * self.gm[j]
        for j in range(self.n):
            gtheta[j] = m[j] * (self.gm[j] - mg)
        return top + lse_temp * log(tot)


def true_components(m, H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0, comp_ptr, comp_idx, comp_w):
    cdef _Problem prob = _Problem(H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0, comp_ptr, comp_idx, comp_w)
    cdef const double[::1] mv = np.ascontiguousarray(m, dtype=np.float64)
    prob.true_max(mv)
    return np.asarray(prob.sk).copy()


def smoothed_objective(theta, H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0, comp_ptr, comp_idx, comp_w, double tau, double lse_temp):
    cdef _Problem prob = _Problem(H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0, comp_ptr, comp_idx, comp_w)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef double[::1] m = np.zeros(th.shape[0])
    cdef double[::1] g = np.zeros(th.shape[0])
    _softmax(th, m)
    cdef double val = prob.smoothed(m, tau, lse_temp, g)
    return float(val), np.asarray(g)


def orca_descent(
    theta0, H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0, comp_ptr, comp_idx, comp_w,
    double tau, double lse_temp, long steps, double lr, double beta1, double beta2,
    double eps, double stop_below,
):
    cdef _Problem prob = _Problem(H, L, c0, C, qlev, qw, qsuf, gU, gV, gv0, comp_ptr, comp_idx, comp_w)
    cdef Py_ssize_t n = prob.n, j
    cdef double[::1] theta = np.array(theta0, dtype=np.float64)
    cdef double[::1] best_theta = np.array(theta0, dtype=np.float64)
    cdef double[::1] m = np.zeros(n)
    cdef double[::1] g = np.zeros(n)
    cdef double[::1] mom1 = np.zeros(n)
    cdef double[::1] mom2 = np.zeros(n)
    cdef double best_val = INFINITY, init_val = 0.0, val, mhat, vhat, b1t = 1.0, b2t = 1.0
    cdef long it = 0, halvings = 0
    cdef bint finite, nonzero
    with nogil:
        while True:
            _softmax(theta, m)
            val = prob.true_max(m)
            if it == 0:
                init_val = val
            if val < best_val:
                best_val = val
                best_theta[:] = theta
            if best_val < stop_below or it >= steps:
                break
            prob.smoothed(m, tau, lse_temp, g)
            finite = True
            nonzero = False
            for j in range(n):
                if not isfinite(g[j]):
                    finite = False
                if g[j] != 0.0:
                    nonzero = True
            if not finite:
                halvings += 1
                if halvings > 5:
                    break
                lr *= 0.5
                theta[:] = best_theta
                for j in range(n):
                    mom1[j] = 0.0
                    mom2[j] = 0.0
                b1t = 1.0
                b2t = 1.0
                it += 1
                continue
            if not nonzero:
                break
            b1t *= beta1
            b2t *= beta2
            for j in range(n):
                mom1[j] = beta1 * mom1[j] + (1.0 - beta1) * g[j]
                mom2[j] = beta2 * mom2[j] + (1.0 - beta2) * g[j] * g[j]
                mhat = mom1[j] / (1.0 - b1t)
                vhat = mom2[j] / (1.0 - b2t)
                theta[j] = theta[j] - lr * mhat / (sqrt(vhat) + eps)
            it += 1
    return np.asarray(best_theta), best_val, init_val, it, halvings
