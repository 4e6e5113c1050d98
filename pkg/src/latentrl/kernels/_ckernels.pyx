# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_fallback``; same signatures and outputs."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453
cdef double LOG_RATIO_BOUND = 20.0


def diag_gaussian_logp(const double[:, :] z, const double[:] mu, const double[:] log_sigma):
    cdef Py_ssize_t G = z.shape[0], n = z.shape[1], i, j
    cdef double[:] inv = np.empty(n)
    cdef double base = 0.0, acc, r
    out = np.empty(G)
    cdef double[:] o = out
    for j in range(n):
        inv[j] = exp(-log_sigma[j])
        base += log_sigma[j]
    base = -base - 0.5 * n * LOG_2PI
    for i in range(G):
        acc = 0.0
        for j in range(n):
            r = (z[i, j] - mu[j]) * inv[j]
            acc += r * r
        o[i] = -0.5 * acc + base
    return out


def diag_gaussian_logp_grad(const double[:, :] z, const double[:] mu,
                            const double[:] log_sigma, const double[:] weights):
    cdef Py_ssize_t G = z.shape[0], n = z.shape[1], i, j
    cdef double wsum = 0.0, s1, s2, diff, iv
    dmu_a = np.empty(n)
    dls_a = np.empty(n)
    cdef double[:] dmu = dmu_a, dls = dls_a
    for i in range(G):
        wsum += weights[i]
    for j in range(n):
        s1 = 0.0
        s2 = 0.0
        for i in range(G):
            diff = z[i, j] - mu[j]
            s1 += weights[i] * diff
            s2 += weights[i] * diff * diff
        iv = exp(-2.0 * log_sigma[j])
        dmu[j] = s1 * iv
        dls[j] = s2 * iv - wsum
    return dmu_a, dls_a


def clipped_surrogate(const double[:] logp_new, const double[:] logp_old,
                      const double[:] adv, double eps_clip):
    cdef Py_ssize_t G = logp_new.shape[0], i
    cdef double lr, b, rho, plain, cr, clipped
    surr_a = np.empty(G)
    dsurr_a = np.empty(G)
    flag_a = np.zeros(G, dtype=np.bool_)
    ratio_a = np.empty(G)
    cdef double[:] surr = surr_a, dsurr = dsurr_a, ratio = ratio_a
    cdef cnp.npy_bool[:] flag = flag_a
    for i in range(G):
        lr = logp_new[i] - logp_old[i]
        b = lr
        if b > LOG_RATIO_BOUND:
            b = LOG_RATIO_BOUND
        elif b < -LOG_RATIO_BOUND:
            b = -LOG_RATIO_BOUND
        rho = exp(b)
        ratio[i] = rho
        plain = rho * adv[i]
        cr = rho
        if cr < 1.0 - eps_clip:
            cr = 1.0 - eps_clip
        elif cr > 1.0 + eps_clip:
            cr = 1.0 + eps_clip
        clipped = cr * adv[i]
        if clipped < plain:
            surr[i] = clipped
            dsurr[i] = 0.0
            flag[i] = 1
        else:
            surr[i] = plain
            dsurr[i] = plain if fabs(lr) < LOG_RATIO_BOUND else 0.0
    return surr_a, dsurr_a, flag_a, ratio_a


def diag_gaussian_kl(const double[:] mu_p, const double[:] ls_p,
                     const double[:] mu_q, const double[:] ls_q):
    cdef Py_ssize_t n = mu_p.shape[0], j
    cdef double kl = 0.0, ivq, vp, diff
    dmu_a = np.empty(n)
    dls_a = np.empty(n)
    cdef double[:] dmu = dmu_a, dls = dls_a
    for j in range(n):
        ivq = exp(-2.0 * ls_q[j])
        vp = exp(2.0 * ls_p[j])
        diff = mu_p[j] - mu_q[j]
        kl += ls_q[j] - ls_p[j] + 0.5 * (vp + diff * diff) * ivq - 0.5
        dmu[j] = diff * ivq
        dls[j] = vp * ivq - 1.0
    return kl, dmu_a, dls_a


def contrastive_loss(const double[:, :] V):
    cdef Py_ssize_t G = V.shape[0], d = V.shape[1], k, j, c
    cdef double acc, m, Z, loss = 0.0
    S_a = np.empty((G, G))
    cdef double[:, :] S = S_a
    dV_a = np.zeros((G, d))
    cdef double[:, :] dV = dV_a
    for k in range(G):
        for j in range(k, G):
            acc = 0.0
            for c in range(d):
                acc += V[k, c] * V[j, c]
            S[k, j] = acc
            S[j, k] = acc
    # S becomes the softmax-minus-identity matrix in place
    for k in range(G):
        m = S[k, 0]
        for j in range(1, G):
            if S[k, j] > m:
                m = S[k, j]
        Z = 0.0
        for j in range(G):
            Z += exp(S[k, j] - m)
        loss += m + log(Z) - S[k, k]
        for j in range(G):
            S[k, j] = exp(S[k, j] - m) / Z
        S[k, k] -= 1.0
    for k in range(G):
        for j in range(G):
            acc = S[k, j] + S[j, k]
            if acc != 0.0:
                for c in range(d):
                    dV[k, c] += acc * V[j, c]
    return loss, dV_a
