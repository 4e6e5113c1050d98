"""Pure-numpy reference kernels. Shapes: z is (G, n), mu/log_sigma are (n,), V is (G, d)."""
from __future__ import annotations

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_RATIO_BOUND = 20.0


def diag_gaussian_logp(z, mu, log_sigma):
    r = (z - mu) * np.exp(-log_sigma)
    return -0.5 * np.sum(r * r, axis=1) - np.sum(log_sigma) - 0.5 * z.shape[1] * LOG_2PI


def diag_gaussian_logp_grad(z, mu, log_sigma, weights):
    """Gradient of ``sum_i weights[i] * logp(z[i])`` w.r.t. (mu, log_sigma)."""
    inv_var = np.exp(-2.0 * log_sigma)
    diff = z - mu
    dmu = (weights @ diff) * inv_var
    dls = (weights @ (diff * diff)) * inv_var - np.sum(weights)
    return dmu, dls


def clipped_surrogate(logp_new, logp_old, adv, eps_clip):
    """Per-member PPO clipped surrogate and its derivative w.r.t. ``logp_new``.

    Returns (surrogate, d_surrogate/d_logp_new, clipped_flags, ratio).
    """
    log_ratio = logp_new - logp_old
    bounded = np.clip(log_ratio, -LOG_RATIO_BOUND, LOG_RATIO_BOUND)
    ratio = np.exp(bounded)
    live = np.abs(log_ratio) < LOG_RATIO_BOUND
    plain = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps_clip, 1.0 + eps_clip) * adv
    use_clip = clipped < plain
    surr = np.where(use_clip, clipped, plain)
    dsurr = np.where(use_clip | ~live, 0.0, plain)
    return surr, dsurr, use_clip, ratio


def diag_gaussian_kl(mu_p, ls_p, mu_q, ls_q):
    """KL(p || q) for diagonal Gaussians and its gradient w.r.t. (mu_p, ls_p)."""
    inv_var_q = np.exp(-2.0 * ls_q)
    var_p = np.exp(2.0 * ls_p)
    diff = mu_p - mu_q
    kl = np.sum(ls_q - ls_p + 0.5 * (var_p + diff * diff) * inv_var_q - 0.5)
    return float(kl), diff * inv_var_q, var_p * inv_var_q - 1.0


def contrastive_loss(V):
    """Sum over rows of -log softmax(V V^T)[k, k] and its gradient w.r.t. V."""
    S = V @ V.T
    m = S.max(axis=1, keepdims=True)
    E = np.exp(S - m)
    Z = E.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(Z[:, 0])
    loss = float(np.sum(lse - np.diag(S)))
    dS = E / Z
    dS[np.diag_indices_from(dS)] -= 1.0
    dV = (dS + dS.T) @ V
    return loss, dV
