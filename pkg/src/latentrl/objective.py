"""Training objective: clipped latent GRPO surrogate with KL, contrastive dispersion, AdamW."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import NormError, NumericalError, ShapeError
from .policy import (
    ASSISTANT, PROJECTION, PolicyParams, PolicySnapshot, backward, distributions, forward,
)


@dataclass(frozen=True)
class LossBreakdown:
    l_grpo: float
    l_cl: float
    l_total: float
    kl_value: float
    clip_fraction: float

    def as_row(self) -> dict:
        return {"l_grpo": self.l_grpo, "l_cl": self.l_cl, "l_total": self.l_total,
                "kl_value": self.kl_value, "clip_fraction": self.clip_fraction}


def grpo_loss(logp_new, logp_old, advantages, kl: float, eps_clip: float, beta: float) -> float:
    """-(1/G) sum_i [min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) - beta * kl]."""
    logp_new = np.asarray(logp_new, dtype=np.float64)
    logp_old = np.asarray(logp_old, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    if not (logp_new.shape == logp_old.shape == adv.shape) or logp_new.ndim != 1 or logp_new.size == 0:
        raise ShapeError("logp_new, logp_old and advantages must be equal-length nonempty vectors")
    surr, _, _, ratio = kernels.clipped_surrogate(logp_new, logp_old, adv, eps_clip)
    if not np.all(np.isfinite(ratio)) or not np.all(np.isfinite(surr)):
        raise NumericalError("non-finite importance ratio")
    return float(-np.mean(surr - beta * kl))


def contrastive_loss(pooled, tol: float = 1e-6) -> float:
    """-sum_k log[exp(v_k.v_k) / sum_j exp(v_k.v_j)] over unit vectors, temperature 1."""
    V = np.atleast_2d(np.asarray(pooled, dtype=np.float64))
    norms = np.linalg.norm(V, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise NormError(f"pooled vectors must be unit norm (±{tol}); got norms {norms.min():.6g}..{norms.max():.6g}")
    loss, _ = kernels.contrastive_loss(np.ascontiguousarray(V))
    return loss


def total_loss(l_grpo: float, l_cl: float, gamma: float) -> float:
    return l_grpo + gamma * l_cl


def mean_pairwise_cosine(V: np.ndarray) -> float:
    G = V.shape[0]
    if G < 2:
        return 1.0
    S = V @ V.T
    return float((S.sum() - np.trace(S)) / (G * (G - 1)))


# ---------------------------------------------------------------------------
# loss and exact gradient for a batch of groups
# ---------------------------------------------------------------------------

def loss_and_gradients(params: PolicyParams, groups: Sequence, reference: PolicySnapshot,
                       cfg, *, need_grad: bool = True):
    """Return (LossBreakdown, gradient dict or None), averaged over the groups.

    Advantages are constants. Members with NaN advantage enter only the
    contrastive term. Contrastive gradients flow through the
    reparameterized sample mu + sigma * noise.
    """
    if not groups:
        raise ShapeError("need at least one group")
    B = len(groups)
    dists, cache = distributions(params, [g.instance for g in groups])
    ref_cache = forward(reference.params, cache.x)
    T, d = params.T, params.d
    n = T * d
    dmu = np.zeros((B, n))
    dls = np.zeros((B, n))
    tot = np.zeros(5)
    for b, (g, dist) in enumerate(zip(groups, dists)):
        mu, ls = cache.mu[b], cache.log_sigma[b]
        if g.latents.shape[1:] != (T, d):
            raise ShapeError(f"group latents {g.latents.shape[1:]} do not match policy {(T, d)}")
        # GRPO surrogate on decoded members
        idx = np.flatnonzero(~np.isnan(g.advantages))
        l_grpo = 0.0
        clip_frac = 0.0
        kl, dmu_kl, dls_kl = kernels.diag_gaussian_kl(mu, ls, ref_cache.mu[b], ref_cache.log_sigma[b])
        if idx.size:
            z = np.ascontiguousarray(g.latents[idx].reshape(idx.size, n))
            logp_new = kernels.diag_gaussian_logp(z, mu, ls)
            surr, dsurr, clipped, ratio = kernels.clipped_surrogate(
                logp_new, np.ascontiguousarray(g.logp_old[idx]),
                np.ascontiguousarray(g.advantages[idx]), cfg.eps_clip)
            if not np.all(np.isfinite(ratio)):
                raise NumericalError("non-finite importance ratio")
            l_grpo = float(-np.mean(surr)) + cfg.beta * kl
            clip_frac = float(np.mean(clipped))
            if need_grad:
                gm, gl = kernels.diag_gaussian_logp_grad(z, mu, ls, -dsurr / idx.size)
                dmu[b] += gm + cfg.beta * dmu_kl
                dls[b] += gl + cfg.beta * dls_kl
        # contrastive dispersion on every member
        sigma = np.exp(ls).reshape(T, d)
        zr = mu.reshape(T, d) + sigma * g.noise
        u = zr.mean(axis=1)
        norms = np.sqrt(np.sum(u * u, axis=1))
        nz = norms > 0
        V = np.zeros_like(u)
        V[nz] = u[nz] / norms[nz, None]
        V[~nz, 0] = 1.0
        l_cl, dV = kernels.contrastive_loss(V)
        if need_grad and cfg.gamma != 0.0:
            dU = np.zeros_like(dV)
            dU[nz] = (dV[nz] - V[nz] * np.sum(V[nz] * dV[nz], axis=1, keepdims=True)) / norms[nz, None]
            dU *= cfg.gamma / T
            dmu[b] += np.broadcast_to(dU.sum(axis=0), (T, d)).ravel()
            dsig = np.einsum("gd,gtd->td", dU, g.noise)
            dls[b] += (dsig * sigma).ravel()
        tot += (l_grpo, l_cl, l_grpo + cfg.gamma * l_cl, kl, clip_frac)
    tot /= B
    breakdown = LossBreakdown(*(float(v) for v in tot))
    if not np.isfinite(breakdown.l_total):
        raise NumericalError(f"non-finite loss {breakdown.l_total}")
    if not need_grad:
        return breakdown, None
    grads = backward(params, cache, dmu / B, dls / B)
    for k, v in grads.items():
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"non-finite gradient in {k}")
    return breakdown, grads


def compute_gradients(params: PolicyParams, group, reference: PolicySnapshot, cfg):
    groups = group if isinstance(group, (list, tuple)) else [group]
    return loss_and_gradients(params, groups, reference, cfg)[1]


# ---------------------------------------------------------------------------
# clipping and AdamW
# ---------------------------------------------------------------------------

def _in_scope(name: str, scope: str) -> bool:
    if scope == "all":
        return True
    if scope == "projection_only":
        return name.startswith(PROJECTION + "/")
    raise ValueError(f"unknown clip scope {scope!r}")


def grad_norm(grads: dict, scope: str = "all") -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for k, g in grads.items() if _in_scope(k, scope))))


def clip_gradients_l2(grads: dict, max_norm: float, scope: str = "projection_only") -> dict:
    """Rescale the in-scope block to L2 norm ``max_norm`` if it is larger; other blocks untouched."""
    if max_norm <= 0:
        raise ValueError("max_norm must be > 0")
    norm = grad_norm(grads, scope)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: (g * scale if _in_scope(k, scope) else g) for k, g in grads.items()}


@dataclass(frozen=True)
class AdamHyper:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def from_config(cls, cfg) -> "AdamHyper":
        return cls(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.step, {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def block_of(name: str) -> str:
    return name.split("/", 1)[0]


def adamw_step(arrays: dict, grads: dict, state: AdamState, lr_map: dict, hyper: AdamHyper):
    """One decoupled-weight-decay Adam step with a learning rate per block.

    ``arrays`` maps names like ``assistant/W1`` to arrays; the prefix before
    the slash selects the rate from ``lr_map``. Returns new (arrays, state).
    """
    t = state.step + 1
    new_state = AdamState(t, {}, {})
    out = {}
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for name, p in arrays.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        lr = lr_map[block_of(name)]
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        q = p * (1.0 - lr * hyper.weight_decay)
        q = q - lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        out[name] = q
        new_state.m[name] = m
        new_state.v[name] = v
    return out, new_state


def lr_map_from_config(cfg) -> dict:
    return {ASSISTANT: cfg.lr_assistant, PROJECTION: cfg.lr_projection}
