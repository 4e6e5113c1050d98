"""Domain types, run configuration and seeded randomness shared by every module."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError

# Sub-seed stream tags. A (stream, iteration, group, member) path identifies
# every random draw in a run, so any single trajectory can be regenerated.
STREAM_INIT = 1
STREAM_TASK = 2
STREAM_SAMPLE = 3
STREAM_EVAL = 4
STREAM_SCORER = 5
STREAM_LAB = 6

DECODE_MODES = ("full", "selective")
CLIP_SCOPES = ("projection_only", "all")
TASK_KINDS = ("mod_arith",)
OPERATORS = "+-*"


def derive_seed(seed: int, *path: int) -> int:
    """Split ``seed`` into an independent 64-bit sub-seed addressed by ``path``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def _frozen_array(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LatentTrajectory:
    """T latent reasoning steps of dimension d, stored as a read-only (T, d) array."""

    steps: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.steps, 2, "trajectory")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"trajectory needs T >= 1 and d >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ShapeError("trajectory components must be finite")
        object.__setattr__(self, "steps", arr)

    @property
    def T(self) -> int:
        return self.steps.shape[0]

    @property
    def d(self) -> int:
        return self.steps.shape[1]


@dataclass(frozen=True)
class TaskInstance:
    context: str
    query: str
    ground_truth: str
    answer_space_size: int
    operands: tuple = ()
    operators: tuple = ()

    def __post_init__(self):
        if self.answer_space_size < 1:
            raise ConfigError("answer_space_size must be positive")
        if self.ground_truth not in {str(i) for i in range(self.answer_space_size)}:
            raise ConfigError(
                f"ground truth {self.ground_truth!r} outside answer space "
                f"0..{self.answer_space_size - 1}"
            )

    @property
    def modulus(self) -> int:
        return self.answer_space_size


@dataclass(frozen=True)
class RewardRecord:
    r_corr: float
    r_fmt: float
    r_total: float


@dataclass(frozen=True)
class TrajectoryGroup:
    """G trajectories sampled for one instance plus everything derived from them.

    ``latents`` and ``noise`` are (G, T, d); ``noise`` holds the standard-normal
    draws so the sample can be re-expressed under new parameters. Missing
    advantages are NaN.
    """

    instance: TaskInstance
    latents: np.ndarray
    noise: np.ndarray
    logp_current: np.ndarray
    logp_old: np.ndarray
    decoded: tuple = ()
    rewards: tuple = ()
    advantages: Optional[np.ndarray] = None
    decode_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        G = self.latents.shape[0]
        if self.latents.ndim != 3 or self.noise.shape != self.latents.shape:
            raise ShapeError("latents and noise must share shape (G, T, d)")
        if not self.decoded:
            object.__setattr__(self, "decoded", (None,) * G)
        if not self.rewards:
            object.__setattr__(self, "rewards", (None,) * G)
        if self.advantages is None:
            object.__setattr__(self, "advantages", np.full(G, np.nan))
        if self.decode_mask is None:
            object.__setattr__(self, "decode_mask", np.zeros(G, dtype=bool))
        lengths = {
            len(self.logp_current), len(self.logp_old), len(self.decoded),
            len(self.rewards), len(self.advantages), len(self.decode_mask),
        }
        if lengths != {G}:
            raise ShapeError(f"parallel lists must all have length G={G}")
        for adv, rew in zip(self.advantages, self.rewards):
            if not np.isnan(adv) and rew is None:
                raise ShapeError("advantage present without a reward")

    @property
    def G(self) -> int:
        return self.latents.shape[0]

    @property
    def trajectories(self) -> list[LatentTrajectory]:
        return [LatentTrajectory(z) for z in self.latents]

    def replace(self, **changes) -> "TrajectoryGroup":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class RunConfig:
    """All hyperparameters of a run. Defaults are sized for single-core runs of a few minutes."""

    d: int = 32
    G: int = 16
    K: int = 3
    T: int = 4
    lam: float = 0.5
    beta: float = 0.01
    gamma: float = 0.1
    eps_clip: float = 0.2
    eps_std: float = 1e-8
    lr_assistant: float = 1e-3
    lr_projection: float = 1e-3
    max_grad_norm: float = 1.0
    clip_scope: str = "projection_only"
    updates_per_batch: int = 1
    decode_mode: str = "full"
    seed: int = 0
    iterations: int = 2000
    batch_instances: int = 4
    checkpoint_interval: int = 500
    max_latent_steps: int = 32
    # task
    task_kind: str = "mod_arith"
    modulus: int = 16
    chain_length: int = 1
    operators: str = "+-"
    # assistant network
    embed_dim: int = 160
    hidden: int = 64
    sigma_min: float = 1e-3
    sigma_max: float = 2.0
    sigma_init: float = 0.5
    mean_init_scale: float = 0.1
    # optimizer
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # frozen decoder and selective decoding
    decoder_seed: int = 20240601
    gate_index: int = -1
    scorer_warmup: int = 50
    scorer_steps: int = 20
    scorer_lr: float = 0.5
    scorer_buffer: int = 2048
    # evaluation
    eval_instances: int = 500

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        raw = flatten_config(raw)
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kwargs = {}
        for name, value in raw.items():
            kwargs[name] = _coerce(name, value, known[name].type)
        return cls(**kwargs)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def resolved_gate_index(self) -> int:
        return self.gate_index % self.d


def _coerce(name: str, value: Any, typ: Any) -> Any:
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if typ == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be of type {typ}, got {value!r}") from None


def flatten_config(raw: dict[str, Any]) -> dict[str, Any]:
    """Flatten one level of nesting: ``{"task": {"modulus": 16}}`` -> ``{"modulus": 16}``.

    Keys of the ``task`` table keep the ``task_`` prefix only for ``kind``.
    """
    flat: dict[str, Any] = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                name = "task_kind" if (key == "task" and sub == "kind") else sub
                if name in flat:
                    raise ConfigError(f"duplicate config key {name!r}")
                flat[name] = v
        else:
            if key in flat:
                raise ConfigError(f"duplicate config key {key!r}")
            flat[key] = value
    return flat


def validate_config(raw: RunConfig) -> RunConfig:
    """Return ``raw`` unchanged if every invariant holds, else raise ConfigError."""
    c = raw

    def need(cond: bool, msg: str):
        if not cond:
            raise ConfigError(msg)

    for name in ("d", "G", "T"):
        need(getattr(c, name) >= 1, f"{name} must be ≥ 1")
    need(c.K >= 1, "K must be ≥ 1")
    need(c.K <= c.G, "K must be ≤ G")
    need(c.T <= c.max_latent_steps, "T must be ≤ max_latent_steps")
    need(0.0 < c.eps_clip < 1.0, "eps_clip must lie in (0, 1)")
    for name in ("lam", "beta", "gamma", "eps_std", "lr_assistant", "lr_projection",
                 "weight_decay", "scorer_lr"):
        v = getattr(c, name)
        need(math.isfinite(v) and v >= 0, f"{name} must be nonnegative")
    need(math.isfinite(c.max_grad_norm) and c.max_grad_norm > 0, "max_grad_norm must be > 0")
    need(c.updates_per_batch >= 1, "updates_per_batch must be ≥ 1")
    need(c.batch_instances >= 1, "batch_instances must be ≥ 1")
    need(c.iterations >= 0, "iterations must be ≥ 0")
    need(c.checkpoint_interval >= 1, "checkpoint_interval must be ≥ 1")
    need(c.decode_mode in DECODE_MODES, f"decode_mode must be one of {DECODE_MODES}")
    need(c.clip_scope in CLIP_SCOPES, f"clip_scope must be one of {CLIP_SCOPES}")
    need(0 <= c.seed < 2**64, "seed must be a 64-bit unsigned integer")
    need(0 <= c.decoder_seed < 2**64, "decoder_seed must be a 64-bit unsigned integer")
    need(c.task_kind in TASK_KINDS, f"task_kind must be one of {TASK_KINDS}")
    need(c.modulus >= 2, "modulus must be ≥ 2")
    need(c.chain_length >= 1, "chain_length must be ≥ 1")
    need(len(c.operators) >= 1 and set(c.operators) <= set(OPERATORS),
         f"operators must be a nonempty subset of {OPERATORS!r}")
    need(c.embed_dim >= 1 and c.hidden >= 1, "embed_dim and hidden must be ≥ 1")
    need(0 < c.sigma_min < c.sigma_max, "need 0 < sigma_min < sigma_max")
    need(c.sigma_min < c.sigma_init < c.sigma_max, "sigma_init must lie in (sigma_min, sigma_max)")
    need(c.mean_init_scale >= 0, "mean_init_scale must be nonnegative")
    need(0 <= c.adam_beta1 < 1 and 0 <= c.adam_beta2 < 1, "adam betas must lie in [0, 1)")
    need(c.adam_eps > 0, "adam_eps must be > 0")
    need(-c.d <= c.gate_index < c.d, "gate_index must index a latent coordinate")
    rewarded = c.G if c.decode_mode == "full" else c.K
    need(rewarded >= 2, "group advantages need at least 2 decoded members (G, or K in selective mode)")
    need(c.scorer_warmup >= 0 and c.scorer_steps >= 0 and c.scorer_buffer >= 1,
         "scorer_warmup/scorer_steps must be ≥ 0 and scorer_buffer ≥ 1")
    need(c.scorer_lr <= 1.0, "scorer_lr must be ≤ 1 (larger steps can diverge on unit-norm inputs)")
    need(c.eval_instances >= 1, "eval_instances must be ≥ 1")
    return c


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a JSON or YAML key-value tree. Raises ConfigError naming the path."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text) if text.strip() else {}
    except Exception as exc:  # parse errors from either backend
        raise ConfigError(f"cannot parse config file {p}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a key-value mapping")
    return data


def load_config(path: str | Path, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    raw = flatten_config(load_config_file(path))
    raw.update(overrides or {})
    return validate_config(RunConfig.from_dict(raw))


def stack_trajectories(trajs: Sequence[LatentTrajectory]) -> np.ndarray:
    return np.stack([t.steps for t in trajs])
