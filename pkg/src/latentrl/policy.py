"""Assistant policy over latent trajectories.

The assistant is a two-layer tanh MLP over a frozen query embedding; the
projection layer maps its output to per-step Gaussian means and squashed
log-standard-deviations. Step t does not depend on sampled z_{<t}, so the
trajectory log-density is an exact sum of diagonal-Gaussian terms.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .core import LatentTrajectory, TaskInstance, TrajectoryGroup, derive_seed, make_rng, STREAM_INIT
from .errors import NumericalError, ShapeError

ASSISTANT = "assistant"
PROJECTION = "projection"
PARAM_NAMES = (
    "assistant/W1", "assistant/b1", "assistant/W2", "assistant/b2",
    "projection/Wm", "projection/bm", "projection/Ws", "projection/bs",
)

_HASH_SEED = 0x1A7E47
_OPS = "+-*"


# ---------------------------------------------------------------------------
# query embedding
# ---------------------------------------------------------------------------

def structural_features(instance: TaskInstance) -> np.ndarray:
    """Operand phases, operator indicators, operator-gated operand crosses, modulus scale.

    Phases use every frequency 1..M//2. For each operator slot the products of
    the adjacent operands' phase features at equal frequency are written into
    the block of the operator actually used (zeros elsewhere).
    """
    M = instance.modulus
    freqs = np.arange(1, max(1, M // 2) + 1)
    feats = []
    cos_sin = []
    for a in instance.operands:
        ang = 2.0 * np.pi * a * freqs / M
        cos_sin.append((np.cos(ang), np.sin(ang)))
        feats += [cos_sin[-1][0], cos_sin[-1][1]]
    for j, op in enumerate(instance.operators):
        feats.append(np.array([1.0 if op == o else 0.0 for o in _OPS]))
        (ca, sa), (cb, sb) = cos_sin[j], cos_sin[j + 1]
        cross = np.concatenate([ca * cb, sa * sb, sa * cb, ca * sb])
        for o in _OPS:
            feats.append(cross if op == o else np.zeros_like(cross))
    feats.append(np.array([np.log(M) / np.log(64.0), 1.0]))
    return np.concatenate(feats)


def _hash_layout(n_raw: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    rng = make_rng(derive_seed(_HASH_SEED, n_raw, dim))
    slots = rng.permutation(max(n_raw, dim))[:n_raw] % dim
    signs = rng.choice([-1.0, 1.0], size=n_raw)
    return slots, signs


def embed_query(instance: TaskInstance, dim: int) -> np.ndarray:
    """Frozen signed feature hashing of the structural features into ``dim`` slots.

    Features land in distinct slots whenever ``dim`` is at least the raw
    feature count, so distinct instances get distinct embeddings.
    """
    raw = structural_features(instance)
    slots, signs = _hash_layout(raw.size, dim)
    out = np.zeros(dim)
    np.add.at(out, slots, signs * raw)
    return out


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass
class PolicyParams:
    embed_dim: int
    hidden: int
    T: int
    d: int
    sigma_min: float
    sigma_max: float
    arrays: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.shapes()
        for name in PARAM_NAMES:
            a = self.arrays.get(name)
            if a is None or a.shape != shapes[name]:
                got = None if a is None else a.shape
                raise ShapeError(f"parameter {name} must have shape {shapes[name]}, got {got}")

    def shapes(self) -> dict[str, tuple]:
        E, H, n = self.embed_dim, self.hidden, self.T * self.d
        return {
            "assistant/W1": (H, E), "assistant/b1": (H,),
            "assistant/W2": (H, H), "assistant/b2": (H,),
            "projection/Wm": (n, H), "projection/bm": (n,),
            "projection/Ws": (n, H), "projection/bs": (n,),
        }

    @property
    def n_params(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.embed_dim, self.hidden, self.T, self.d, self.sigma_min,
                            self.sigma_max, {k: v.copy() for k, v in self.arrays.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in PARAM_NAMES:
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.arrays[name], dtype="<f8").tobytes())
        return h.hexdigest()

    @property
    def log_sigma_bounds(self) -> tuple[float, float]:
        return float(np.log(self.sigma_min)), float(np.log(self.sigma_max))


@dataclass(frozen=True)
class PolicySnapshot:
    """Read-only copy of the policy, tagged ``old`` or ``reference``."""

    tag: str
    params: PolicyParams

    @classmethod
    def take(cls, params: PolicyParams, tag: str) -> "PolicySnapshot":
        if tag not in ("old", "reference"):
            raise ValueError(f"snapshot tag must be 'old' or 'reference', got {tag!r}")
        frozen = params.copy()
        for a in frozen.arrays.values():
            a.flags.writeable = False
        return cls(tag, frozen)


def init_policy(cfg, seed: int | None = None) -> PolicyParams:
    """Fresh parameters; the log-std head starts at ``sigma_init`` everywhere."""
    seed = cfg.seed if seed is None else seed
    rng = make_rng(derive_seed(seed, STREAM_INIT))
    E, H, n = cfg.embed_dim, cfg.hidden, cfg.T * cfg.d
    lo, hi = np.log(cfg.sigma_min), np.log(cfg.sigma_max)
    frac = (np.log(cfg.sigma_init) - lo) / (hi - lo)
    arrays = {
        "assistant/W1": rng.standard_normal((H, E)) / np.sqrt(E),
        "assistant/b1": np.zeros(H),
        "assistant/W2": rng.standard_normal((H, H)) / np.sqrt(H),
        "assistant/b2": np.zeros(H),
        "projection/Wm": rng.standard_normal((n, H)) * (cfg.mean_init_scale / np.sqrt(H)),
        "projection/bm": np.zeros(n),
        "projection/Ws": np.zeros((n, H)),
        "projection/bs": np.full(n, np.log(frac / (1.0 - frac))),
    }
    return PolicyParams(E, H, cfg.T, cfg.d, cfg.sigma_min, cfg.sigma_max, arrays)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryDistribution:
    mu: np.ndarray  # (T, d)
    log_sigma: np.ndarray  # (T, d)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    @property
    def shape(self) -> tuple:
        return self.mu.shape

    @classmethod
    def from_sigma(cls, mu, sigma) -> "TrajectoryDistribution":
        mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
        if mu.shape != sigma.shape:
            raise ShapeError(f"mu {mu.shape} and sigma {sigma.shape} differ")
        return cls(mu, np.log(sigma))


@dataclass
class ForwardCache:
    x: np.ndarray  # (B, E)
    h1: np.ndarray
    h2: np.ndarray
    mu: np.ndarray  # (B, n)
    sig: np.ndarray  # squashing sigmoid, (B, n)
    log_sigma: np.ndarray  # (B, n)


def forward(params: PolicyParams, x: np.ndarray) -> ForwardCache:
    a = params.arrays
    x = np.atleast_2d(x)
    h1 = np.tanh(x @ a["assistant/W1"].T + a["assistant/b1"])
    h2 = np.tanh(h1 @ a["assistant/W2"].T + a["assistant/b2"])
    mu = h2 @ a["projection/Wm"].T + a["projection/bm"]
    s = h2 @ a["projection/Ws"].T + a["projection/bs"]
    sig = 0.5 * (1.0 + np.tanh(0.5 * s))
    lo, hi = params.log_sigma_bounds
    log_sigma = lo + (hi - lo) * sig
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(log_sigma))):
        raise NumericalError("policy produced non-finite distribution parameters")
    return ForwardCache(x, h1, h2, mu, sig, log_sigma)


def backward(params: PolicyParams, cache: ForwardCache, dmu: np.ndarray, dlog_sigma: np.ndarray) -> dict:
    """Parameter gradients given dL/dmu and dL/dlog_sigma, both (B, n)."""
    a = params.arrays
    lo, hi = params.log_sigma_bounds
    ds = dlog_sigma * (hi - lo) * cache.sig * (1.0 - cache.sig)
    dh2 = dmu @ a["projection/Wm"] + ds @ a["projection/Ws"]
    da2 = dh2 * (1.0 - cache.h2 ** 2)
    dh1 = da2 @ a["assistant/W2"]
    da1 = dh1 * (1.0 - cache.h1 ** 2)
    return {
        "assistant/W1": da1.T @ cache.x,
        "assistant/b1": da1.sum(axis=0),
        "assistant/W2": da2.T @ cache.h1,
        "assistant/b2": da2.sum(axis=0),
        "projection/Wm": dmu.T @ cache.h2,
        "projection/bm": dmu.sum(axis=0),
        "projection/Ws": ds.T @ cache.h2,
        "projection/bs": ds.sum(axis=0),
    }


def distributions(params: PolicyParams, instances: Sequence[TaskInstance]) -> tuple[list, ForwardCache]:
    x = np.stack([embed_query(inst, params.embed_dim) for inst in instances])
    cache = forward(params, x)
    shape = (params.T, params.d)
    dists = [TrajectoryDistribution(m.reshape(shape), ls.reshape(shape))
             for m, ls in zip(cache.mu, cache.log_sigma)]
    return dists, cache


def trajectory_distribution(params: PolicyParams, instance: TaskInstance) -> TrajectoryDistribution:
    return distributions(params, [instance])[0][0]


# ---------------------------------------------------------------------------
# sampling and densities
# ---------------------------------------------------------------------------

def standard_noise(seed: int, G: int, T: int, d: int) -> np.ndarray:
    """Per-member noise; member i uses sub-seed ``derive_seed(seed, i)``."""
    return np.stack([make_rng(derive_seed(seed, i)).standard_normal((T, d)) for i in range(G)])


def sample_from(dist: TrajectoryDistribution, instance: TaskInstance, G: int, seed: int) -> TrajectoryGroup:
    if G < 1:
        raise ShapeError(f"group size must be ≥ 1, got {G}")
    T, d = dist.shape
    eta = standard_noise(seed, G, T, d)
    z = dist.mu + np.exp(dist.log_sigma) * eta
    logp = kernels.diag_gaussian_logp(z.reshape(G, -1), dist.mu.ravel(), dist.log_sigma.ravel())
    if not np.all(np.isfinite(logp)):
        raise NumericalError("non-finite log-density while sampling")
    return TrajectoryGroup(instance=instance, latents=z, noise=eta,
                           logp_current=logp, logp_old=logp.copy())


def sample_group(params: PolicyParams, instance: TaskInstance, G: int, seed: int) -> TrajectoryGroup:
    return sample_from(trajectory_distribution(params, instance), instance, G, seed)


def _check_shape(dist: TrajectoryDistribution, steps: np.ndarray):
    if steps.shape != dist.shape:
        raise ShapeError(f"trajectory shape {steps.shape} does not match distribution {dist.shape}")


def log_prob(dist: TrajectoryDistribution, traj: LatentTrajectory) -> float:
    steps = traj.steps if isinstance(traj, LatentTrajectory) else np.asarray(traj, dtype=np.float64)
    _check_shape(dist, steps)
    return float(kernels.diag_gaussian_logp(steps.reshape(1, -1), dist.mu.ravel(),
                                            dist.log_sigma.ravel())[0])


def gaussian_kl(p: TrajectoryDistribution, q: TrajectoryDistribution) -> float:
    if p.shape != q.shape:
        raise ShapeError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    kl, _, _ = kernels.diag_gaussian_kl(p.mu.ravel(), p.log_sigma.ravel(),
                                        q.mu.ravel(), q.log_sigma.ravel())
    return max(kl, 0.0)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def pool_unit(latents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean over steps then L2-normalize, row-wise over a (G, T, d) stack.

    Returns (unit vectors, pre-normalization norms). Zero means map to e_1.
    """
    u = latents.mean(axis=1)
    norms = np.sqrt(np.sum(u * u, axis=1))
    v = np.zeros_like(u)
    nz = norms > 0
    v[nz] = u[nz] / norms[nz, None]
    v[~nz, 0] = 1.0
    return v, norms


def pool_trajectory(traj: LatentTrajectory) -> np.ndarray:
    steps = traj.steps if isinstance(traj, LatentTrajectory) else np.asarray(traj, dtype=np.float64)
    if steps.ndim != 2 or steps.shape[0] < 1:
        raise ShapeError("trajectory must be a nonempty (T, d) array")
    return pool_unit(steps[None])[0][0]
