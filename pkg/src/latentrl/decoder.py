"""Frozen latent-to-text decoder and the latent pre-screening scorer.

The decoder stands in for a frozen main model: a seeded random linear
readout from the pooled trajectory to M answer classes, plus a format gate
on one latent coordinate. Its parameters are read-only arrays and a content
digest is taken at construction.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import LatentTrajectory, TaskInstance, TrajectoryGroup, make_rng
from .errors import BudgetError, ShapeError
from .policy import pool_trajectory, pool_unit


def parameter_checksum(readout: np.ndarray, bias: np.ndarray, gate_index: int) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(readout, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(bias, dtype="<f8").tobytes())
    h.update(int(gate_index).to_bytes(8, "little", signed=True))
    return h.hexdigest()


@dataclass(frozen=True)
class FrozenDecoder:
    readout: np.ndarray  # (d, M)
    bias: np.ndarray  # (M,)
    gate_index: int
    checksum: str = ""

    def __post_init__(self):
        W = np.array(self.readout, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[1],):
            raise ShapeError(f"readout {W.shape} and bias {b.shape} are inconsistent")
        if not 0 <= self.gate_index < W.shape[0]:
            raise ShapeError(f"gate_index {self.gate_index} outside 0..{W.shape[0] - 1}")
        W.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "readout", W)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "checksum", parameter_checksum(W, b, self.gate_index))

    @classmethod
    def create(cls, d: int, M: int, seed: int, gate_index: int = -1) -> "FrozenDecoder":
        rng = make_rng(seed)
        W = rng.standard_normal((d, M))
        b = 0.1 * rng.standard_normal(M)
        return cls(W, b, gate_index % d)

    @classmethod
    def from_config(cls, cfg) -> "FrozenDecoder":
        return cls.create(cfg.d, cfg.modulus, cfg.decoder_seed, cfg.resolved_gate_index)

    @property
    def d(self) -> int:
        return self.readout.shape[0]

    @property
    def M(self) -> int:
        return self.readout.shape[1]

    def current_checksum(self) -> str:
        return parameter_checksum(self.readout, self.bias, self.gate_index)


def render_trace(steps: np.ndarray) -> str:
    norms = np.sqrt(np.sum(steps * steps, axis=1))
    return "latent steps " + " ".join(f"{i + 1}:{v:.3f}" for i, v in enumerate(norms))


def _render(cls_idx: int, gate_open: bool, steps: np.ndarray) -> str:
    text = f"<think>{render_trace(steps)}</think><answer>{cls_idx}"
    return text + "</answer>" if gate_open else text


def decode_many(dec: FrozenDecoder, latents: np.ndarray, instance: TaskInstance) -> list[str]:
    """Decode a (G, T, d) stack; one main-model forward per row."""
    if latents.ndim != 3 or latents.shape[2] != dec.d:
        raise ShapeError(f"latents {latents.shape} do not match decoder dimension {dec.d}")
    if instance.answer_space_size != dec.M:
        raise ShapeError(f"instance answer space {instance.answer_space_size} != decoder classes {dec.M}")
    V, _ = pool_unit(latents)
    scores = V @ dec.readout + dec.bias
    classes = np.argmax(scores, axis=1)
    gates = V[:, dec.gate_index] > 0
    return [_render(int(c), bool(g), z) for c, g, z in zip(classes, gates, latents)]


def decode(dec: FrozenDecoder, traj: LatentTrajectory, instance: TaskInstance) -> str:
    steps = traj.steps if isinstance(traj, LatentTrajectory) else np.asarray(traj, dtype=np.float64)
    return decode_many(dec, steps[None], instance)[0]


# ---------------------------------------------------------------------------
# pre-screening scorer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatentScorer:
    """Linear regression head over pooled unit vectors predicting total reward."""

    weights: np.ndarray
    bias: float = 0.0

    @classmethod
    def zeros(cls, d: int) -> "LatentScorer":
        return cls(np.zeros(d), 0.0)

    @property
    def n_params(self) -> int:
        return self.weights.size + 1


def _pooled(x) -> np.ndarray:
    if isinstance(x, LatentTrajectory):
        return pool_trajectory(x)
    x = np.asarray(x, dtype=np.float64)
    return pool_trajectory(x) if x.ndim == 2 else x


def score_trajectory(scorer: LatentScorer, traj) -> float:
    v = _pooled(traj)
    if v.shape != scorer.weights.shape:
        raise ShapeError(f"pooled vector {v.shape} does not match scorer {scorer.weights.shape}")
    return float(v @ scorer.weights + scorer.bias)


def score_pooled(scorer: LatentScorer, V: np.ndarray) -> np.ndarray:
    if V.ndim != 2 or V.shape[1] != scorer.weights.size:
        raise ShapeError(f"pooled block {V.shape} does not match scorer {scorer.weights.shape}")
    return V @ scorer.weights + scorer.bias


def topk_mask(scores: Sequence[float], K: int) -> np.ndarray:
    """Exactly K entries at the highest scores; ties go to the lower index."""
    s = np.asarray(scores, dtype=np.float64)
    G = s.size
    if not 1 <= K <= G:
        raise BudgetError(f"decode budget K={K} outside 1..{G}")
    order = np.lexsort((np.arange(G), -s))
    mask = np.zeros(G, dtype=bool)
    mask[order[:K]] = True
    return mask


def prescreen_topk(scorer: LatentScorer, group: TrajectoryGroup, K: int) -> np.ndarray:
    V, _ = pool_unit(group.latents)
    return topk_mask(score_pooled(scorer, V), K)


def scorer_mse(scorer: LatentScorer, X: np.ndarray, y: np.ndarray) -> float:
    r = X @ scorer.weights + scorer.bias - y
    return float(np.mean(r * r))


def fit_scorer(scorer: LatentScorer, pairs, steps: int, lr: float = 0.5) -> LatentScorer:
    """Full-batch gradient descent on 0.5 * mean squared error.

    With unit-norm inputs the augmented features have squared norm 2, so any
    ``lr <= 1`` is a descent step on this convex quadratic.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray):
        X, y = pairs
    else:
        pairs = list(pairs)
        if not pairs:
            raise ValueError("fit_scorer needs at least one pair")
        X = np.stack([np.asarray(p[0], dtype=np.float64) for p in pairs])
        y = np.array([float(p[1]) for p in pairs])
    if X.shape[0] == 0:
        raise ValueError("fit_scorer needs at least one pair")
    w = scorer.weights.astype(np.float64).copy()
    b = float(scorer.bias)
    n = X.shape[0]
    for _ in range(steps):
        r = X @ w + b - y
        w -= lr * (X.T @ r) / n
        b -= lr * float(r.mean())
    return LatentScorer(w, b)
