"""Dual verifiable reward and group-relative advantages."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import RewardRecord
from .errors import DomainError, GroupError
from .tasks import validate_structure, verify_answer


def correctness_reward(decoded: str, truth: str) -> float:
    return 1.0 if verify_answer(decoded, truth) else -1.0


def format_reward(decoded: str) -> float:
    return 1.0 if validate_structure(decoded) else -1.0


def total_reward(r_corr: float, r_fmt: float, lam: float) -> float:
    if r_corr not in (1.0, -1.0) or r_fmt not in (1.0, -1.0):
        raise DomainError(f"rewards must be ±1, got r_corr={r_corr}, r_fmt={r_fmt}")
    if lam < 0:
        raise DomainError(f"format weight must be nonnegative, got {lam}")
    return r_corr + lam * r_fmt


def reward_record(decoded: str, truth: str, lam: float) -> RewardRecord:
    rc = correctness_reward(decoded, truth)
    rf = format_reward(decoded)
    return RewardRecord(rc, rf, total_reward(rc, rf, lam))


def group_advantages(rewards: Sequence[float], eps_std: float) -> np.ndarray:
    """Standardize rewards within the group (population std, divide by G).

    A constant group yields all zeros when ``eps_std > 0``.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise GroupError(f"group advantages need G ≥ 2, got {r.size}")
    if eps_std < 0:
        raise DomainError("eps_std must be nonnegative")
    centered = r - r.mean()
    return centered / (r.std() + eps_std)
