"""Gradient-variance studies, the decode cost model and paired ablations."""
from __future__ import annotations

import csv
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .core import STREAM_EVAL, STREAM_LAB, RunConfig, derive_seed, make_rng, validate_config
from .errors import BudgetError, ConfigError, DomainError, LatentRLError

VARIANCE_KINDS = ("token_level", "latent_level")
ABLATION_KINDS = ("no_contrastive", "trainable_decoder")

# Fixed synthetic policy used by the variance estimators.
ACTION_DIM = 4
LATENT_STEPS = 4
POLICY_SIGMA = 1.0


@dataclass(frozen=True)
class VarianceReport:
    kind: str
    L: int
    n_samples: int
    var_mean: float  # per-coordinate variance, averaged over coordinates
    var_max: float
    reward: str = "sign"


def _decode_weights(L: int, seed: int) -> np.ndarray:
    """Fixed readout from a (T, m) latent to L scalar outputs."""
    return make_rng(derive_seed(seed, STREAM_LAB, 99, L)).standard_normal((L, LATENT_STEPS * ACTION_DIM))


def _score_samples(kind: str, L: int, n: int, seed: int, reward: str, sigma: float) -> np.ndarray:
    """Per-sample score-function gradients, shape (n, n_coords), at mean parameter 0."""
    rng = make_rng(derive_seed(seed, STREAM_LAB, VARIANCE_KINDS.index(kind), L))
    if kind == "token_level":
        # L steps a_t ~ N(theta, sigma^2 I) sharing theta in R^m; the
        # log-likelihood is a sum of L per-step terms.
        eps = rng.standard_normal((n, L, ACTION_DIM))
        actions = sigma * eps
        score = eps.sum(axis=1) / sigma
        outputs = actions.sum(axis=2)
    else:
        # One trajectory-level density over a (T, m) latent with T fixed; the
        # horizon L only enters through the deterministic decoded outputs.
        eps = rng.standard_normal((n, LATENT_STEPS * ACTION_DIM))
        z = sigma * eps
        score = eps / sigma
        outputs = z @ _decode_weights(L, seed).T
    if reward == "sign":
        R = np.where(outputs.sum(axis=1) >= 0, 1.0, -1.0)
    elif reward == "constant":
        R = np.ones(n)
    else:
        raise ConfigError(f"reward must be 'sign' or 'constant', got {reward!r}")
    return R[:, None] * score


def estimate_gradient_variance(kind: str, L: int, n_samples: int, seed: int, *,
                               reward: str = "sign", sigma: float = POLICY_SIGMA) -> VarianceReport:
    """Empirical per-coordinate variance of the score-function gradient estimator.

    ``token_level`` grows linearly with L (each step adds an independent
    score term); ``latent_level`` has a fixed number of density terms.
    """
    if kind not in VARIANCE_KINDS:
        raise ConfigError(f"kind must be one of {VARIANCE_KINDS}, got {kind!r}")
    if L < 1:
        raise ConfigError("L must be ≥ 1")
    if n_samples < 100:
        raise ConfigError("n_samples must be ≥ 100")
    g = _score_samples(kind, L, n_samples, seed, reward, sigma)
    var = g.var(axis=0, ddof=1)
    return VarianceReport(kind, L, n_samples, float(var.mean()), float(var.max()), reward)


def gaussian_score_variance(sigma: float, n_samples: int, seed: int) -> tuple[float, float]:
    """Empirical variance of d/dmu log N(a; mu, sigma^2) and its standard error.

    The analytic value is 1/sigma^2.
    """
    if sigma <= 0:
        raise DomainError("sigma must be > 0")
    a = sigma * make_rng(derive_seed(seed, STREAM_LAB, 7)).standard_normal(n_samples)
    g = a / sigma**2
    var = float(g.var(ddof=1))
    # Var of the sample variance for a normal variable is 2 s^4 / (n - 1)
    se = var * math.sqrt(2.0 / (n_samples - 1))
    return var, se


def variance_sweep(horizons, n_samples: int, seed: int, kinds=VARIANCE_KINDS) -> list[VarianceReport]:
    return [estimate_gradient_variance(k, L, n_samples, seed) for k in kinds for L in horizons]


# ---------------------------------------------------------------------------
# cost model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostReport:
    G: int
    K: float
    c_a: float
    c_m: float
    cost_full: float
    cost_dlr: float
    main_forward_ratio: float
    reduction_factor: float


def cost_report(G: int, K: float, c_a: float = 1.0, c_m: float = 1.0) -> CostReport:
    """Per-group cost of decoding all G samples versus the top K. K may be fractional."""
    if G < 1:
        raise BudgetError(f"G must be ≥ 1, got {G}")
    if K > G:
        raise BudgetError(f"decode budget K={K} exceeds group size G={G}")
    if K <= 0:
        raise BudgetError(f"decode budget K={K} must be positive")
    if not (c_a > 0 and c_m > 0):
        raise DomainError("per-forward costs must be > 0")
    return CostReport(G, K, c_a, c_m,
                      cost_full=G * (c_a + c_m),
                      cost_dlr=G * c_a + K * c_m,
                      main_forward_ratio=K / G,
                      reduction_factor=(G * c_m) / (K * c_m))


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

@dataclass
class AblationRow:
    kind: str
    arm: str  # "base" or "ablated"
    seed: int
    pass_at_1: Optional[float] = None
    mean_cosine: Optional[float] = None
    checksum_constant: Optional[bool] = None
    checksum_start: str = ""
    checksum_end: str = ""
    error: str = ""


@dataclass
class AblationTable:
    kind: str
    rows: list

    def arm(self, name: str) -> list:
        return [r for r in self.rows if r.arm == name]

    def median(self, arm: str, key: str) -> Optional[float]:
        vals = [getattr(r, key) for r in self.arm(arm) if getattr(r, key) is not None]
        return statistics.median(vals) if vals else None

    def summary(self) -> Optional[dict]:
        """Per-arm medians; None for a single seed (nothing to aggregate)."""
        if len(self.arm("base")) < 2:
            return None
        return {arm: {"pass_at_1": self.median(arm, "pass_at_1"),
                      "mean_cosine": self.median(arm, "mean_cosine")}
                for arm in ("base", "ablated")}


def _arm_config(base: RunConfig, kind: str, arm: str, seed: int) -> tuple[RunConfig, bool]:
    cfg = base.replace(seed=seed)
    if arm == "ablated" and kind == "no_contrastive":
        cfg = cfg.replace(gamma=0.0)
    return cfg, arm == "ablated" and kind == "trainable_decoder"


def _run_arm(args) -> AblationRow:
    from .tasks import TaskSpec
    from .trainer import evaluate_params, train

    base, kind, arm, seed = args
    row = AblationRow(kind, arm, seed)
    try:
        cfg, trainable = _arm_config(base, kind, arm, seed)
        art = train(cfg, trainable_decoder=trainable)
        rep = evaluate_params(art.params, art.decoder, TaskSpec.from_config(cfg),
                              cfg.eval_instances, derive_seed(cfg.seed, STREAM_EVAL))
        row.pass_at_1 = rep["pass_at_1"]
        row.mean_cosine = art.final_cosine
        row.checksum_start, row.checksum_end = art.checksum_start, art.checksum_end
        row.checksum_constant = art.checksum_start == art.checksum_end
    except LatentRLError as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def run_ablation(config: RunConfig, kind: str, n_seeds: int, *, workers: int = 1) -> AblationTable:
    """Paired base/ablated trainings on seeds config.seed .. config.seed + n_seeds - 1.

    A failing arm is recorded in its row's ``error`` field; the other arm still runs.
    """
    if kind not in ABLATION_KINDS:
        raise ConfigError(f"ablation kind must be one of {ABLATION_KINDS}, got {kind!r}")
    if n_seeds < 1:
        raise ConfigError("n_seeds must be ≥ 1")
    validate_config(config)
    jobs = [(config, kind, arm, config.seed + i) for i in range(n_seeds) for arm in ("base", "ablated")]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_arm, jobs))
    else:
        rows = [_run_arm(j) for j in jobs]
    return AblationTable(kind, rows)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def write_csv(rows, path) -> Path:
    """Write dataclass rows (one type per file) to ``path``."""
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise ValueError("nothing to write")
    names = [f.name for f in fields(rows[0])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))
    return path
