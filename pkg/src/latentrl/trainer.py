"""The Generate-Reward-Optimize loop, checkpointing, metrics and evaluation."""
from __future__ import annotations

import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .core import (
    STREAM_EVAL, STREAM_SAMPLE, STREAM_TASK, RunConfig, derive_seed, validate_config,
)
from .decoder import FrozenDecoder, LatentScorer, decode_many, fit_scorer, score_pooled, topk_mask
from .errors import ChecksumError, ConfigError, NumericalError
from .objective import (
    AdamHyper, AdamState, adamw_step, clip_gradients_l2, loss_and_gradients,
    lr_map_from_config, mean_pairwise_cosine,
)
from .policy import PolicyParams, PolicySnapshot, distributions, init_policy, pool_unit, sample_from
from .rewards import group_advantages, reward_record
from .tasks import TaskSpec, generate_instance, validate_structure, verify_answer

log = logging.getLogger(__name__)

METRIC_KEYS = ("iter", "mean_reward", "pass_at_1_batch", "l_grpo", "l_cl", "l_total",
               "kl_value", "clip_fraction", "assistant_forwards", "main_forwards")


@dataclass
class RunArtifacts:
    config: RunConfig
    run_dir: Optional[Path]
    params: PolicyParams
    decoder: FrozenDecoder
    scorer: LatentScorer
    optimizer_state: AdamState
    checksum_start: str
    checksum_end: str
    metrics: list = field(default_factory=list)
    final_cosine: Optional[float] = None  # mean pairwise cosine of the last iteration's groups
    checkpoints: list = field(default_factory=list)
    report: Optional[dict] = None

    @property
    def metrics_path(self) -> Optional[Path]:
        return None if self.run_dir is None else self.run_dir / "metrics.jsonl"


@dataclass
class IterationGroups:
    groups: list
    pooled: list  # unit pooled vectors per group, (G, d)
    decoded_classes: list


class _ReadoutTrainer:
    """Unfreezes the decoder readout for the trainable-decoder ablation.

    The readout's softmax over classes is treated as the answer distribution
    and pushed toward each decoded class in proportion to that member's
    advantage; AdamW at the projection learning rate.
    """

    def __init__(self, cfg: RunConfig):
        self.lr = cfg.lr_projection
        self.hyper = AdamHyper.from_config(cfg)
        self.state = AdamState()

    def step(self, dec: FrozenDecoder, batch: IterationGroups) -> FrozenDecoder:
        gW = np.zeros_like(dec.readout)
        gb = np.zeros_like(dec.bias)
        n = 0
        for g, V, cls in zip(batch.groups, batch.pooled, batch.decoded_classes):
            idx = np.flatnonzero(~np.isnan(g.advantages))
            if idx.size == 0:
                continue
            logits = V[idx] @ dec.readout + dec.bias
            logits -= logits.max(axis=1, keepdims=True)
            P = np.exp(logits)
            P /= P.sum(axis=1, keepdims=True)
            onehot = np.zeros_like(P)
            onehot[np.arange(idx.size), cls[idx]] = 1.0
            dlogits = -(g.advantages[idx, None]) * (onehot - P)
            gW += V[idx].T @ dlogits
            gb += dlogits.sum(axis=0)
            n += idx.size
        if n == 0:
            return dec
        arrays = {"frozen/readout": np.array(dec.readout), "frozen/bias": np.array(dec.bias)}
        grads = {"frozen/readout": gW / n, "frozen/bias": gb / n}
        new, self.state = adamw_step(arrays, grads, self.state, {"frozen": self.lr}, self.hyper)
        return FrozenDecoder(new["frozen/readout"], new["frozen/bias"], dec.gate_index)


def _write_jsonl(fh, row: dict):
    fh.write(json.dumps(row, sort_keys=False) + "\n")


def train(config: RunConfig, out_dir=None, *, trainable_decoder: bool = False,
          on_iteration: Optional[Callable[[int, dict], None]] = None) -> RunArtifacts:
    """Run the training loop; write artifacts under ``out_dir`` when given.

    Files: ``config.resolved.json``, ``metrics.jsonl`` (deterministic),
    ``timing.jsonl`` (wall-clock per iteration), ``ckpt_{iter}.bin``,
    ``report.json``.
    """
    cfg = validate_config(config)
    spec = TaskSpec.from_config(cfg)
    decoder = FrozenDecoder.from_config(cfg)
    checksum_start = decoder.checksum
    params = init_policy(cfg)
    reference = PolicySnapshot.take(params, "reference")
    state = AdamState()
    hyper = AdamHyper.from_config(cfg)
    lr_map = lr_map_from_config(cfg)
    scorer = LatentScorer.zeros(cfg.d)
    buf_X: deque = deque(maxlen=cfg.scorer_buffer)
    buf_y: deque = deque(maxlen=cfg.scorer_buffer)
    readout_trainer = _ReadoutTrainer(cfg) if trainable_decoder else None

    run_dir = None
    metrics_fh = timing_fh = None
    art = RunArtifacts(cfg, None, params, decoder, scorer, state, checksum_start, checksum_start)
    if out_dir is not None:
        run_dir = Path(out_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.resolved.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
        if cfg.iterations > 0:
            metrics_fh = open(run_dir / "metrics.jsonl", "w", encoding="utf-8")
            timing_fh = open(run_dir / "timing.jsonl", "w", encoding="utf-8")
        art.run_dir = run_dir
        art.checkpoints.append(save_checkpoint(params, scorer, state, decoder, run_dir / "ckpt_0.bin", cfg))

    bad_streak = 0
    try:
        for it in range(cfg.iterations):
            t0 = time.perf_counter()
            if not trainable_decoder and decoder.current_checksum() != checksum_start:
                raise ChecksumError("frozen decoder changed during training")
            # pi_old: the parameters that sample this iteration's groups
            old = PolicySnapshot.take(params, "old")
            instances = [generate_instance(spec, derive_seed(cfg.seed, STREAM_TASK, it, b))
                         for b in range(cfg.batch_instances)]
            dists, _ = distributions(old.params, instances)
            selective = cfg.decode_mode == "selective" and it >= cfg.scorer_warmup
            if selective and buf_X:
                scorer = fit_scorer(scorer, (np.array(buf_X), np.array(buf_y)), cfg.scorer_steps, cfg.scorer_lr)

            batch = IterationGroups([], [], [])
            assistant_fw = main_fw = 0
            rewards_seen, correct_seen = [], []
            for b, (inst, dist) in enumerate(zip(instances, dists)):
                g = sample_from(dist, inst, cfg.G, derive_seed(cfg.seed, STREAM_SAMPLE, it, b))
                assistant_fw += cfg.G
                V, _ = pool_unit(g.latents)
                mask = topk_mask(score_pooled(scorer, V), cfg.K) if selective else np.ones(cfg.G, dtype=bool)
                idx = np.flatnonzero(mask)
                texts = decode_many(decoder, g.latents[idx], inst)
                main_fw += idx.size
                decoded = [None] * cfg.G
                records = [None] * cfg.G
                for i, txt in zip(idx, texts):
                    decoded[i] = txt
                    records[i] = reward_record(txt, inst.ground_truth, cfg.lam)
                R = np.array([records[i].r_total for i in idx])
                adv = np.full(cfg.G, np.nan)
                adv[idx] = group_advantages(R, cfg.eps_std)
                classes = np.full(cfg.G, -1)
                classes[idx] = np.argmax(V[idx] @ decoder.readout + decoder.bias, axis=1)
                g = g.replace(decoded=tuple(decoded), rewards=tuple(records),
                              advantages=adv, decode_mask=mask)
                batch.groups.append(g)
                batch.pooled.append(V)
                batch.decoded_classes.append(classes)
                rewards_seen.extend(R.tolist())
                correct_seen.extend(records[i].r_corr > 0 for i in idx)
                if cfg.decode_mode == "selective":
                    buf_X.extend(V[idx])
                    buf_y.extend(R.tolist())

            breakdowns = []
            for _ in range(cfg.updates_per_batch):
                try:
                    bd, grads = loss_and_gradients(params, batch.groups, reference, cfg)
                except NumericalError as exc:
                    bad_streak += 1
                    log.warning("iteration %d: %s (skipped update)", it + 1, exc)
                    if bad_streak >= 2:
                        raise NumericalError(f"aborting at iteration {it + 1}: non-finite loss twice in a row ({exc})") from exc
                    continue
                bad_streak = 0
                grads = clip_gradients_l2(grads, cfg.max_grad_norm, cfg.clip_scope)
                new_arrays, state = adamw_step(params.arrays, grads, state, lr_map, hyper)
                params = PolicyParams(params.embed_dim, params.hidden, params.T, params.d,
                                      params.sigma_min, params.sigma_max, new_arrays)
                breakdowns.append(bd)
            if readout_trainer is not None:
                decoder = readout_trainer.step(decoder, batch)

            row = {"iter": it + 1,
                   "mean_reward": float(np.mean(rewards_seen)),
                   "pass_at_1_batch": float(np.mean(correct_seen))}
            row.update(_mean_breakdown(breakdowns))
            row["assistant_forwards"] = assistant_fw
            row["main_forwards"] = main_fw
            art.metrics.append(row)
            if metrics_fh is not None:
                _write_jsonl(metrics_fh, row)
                _write_jsonl(timing_fh, {"iter": it + 1, "wall_ms": (time.perf_counter() - t0) * 1e3})
                if (it + 1) % cfg.checkpoint_interval == 0:
                    art.checkpoints.append(save_checkpoint(
                        params, scorer, state, decoder, run_dir / f"ckpt_{it + 1}.bin", cfg))
            art.final_cosine = float(np.mean([mean_pairwise_cosine(V) for V in batch.pooled]))
            if on_iteration is not None:
                on_iteration(it + 1, {"params": params, "batch": batch, "row": row})
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
            timing_fh.close()

    art.params, art.decoder, art.scorer, art.optimizer_state = params, decoder, scorer, state
    art.checksum_end = decoder.current_checksum()
    if not trainable_decoder and art.checksum_end != checksum_start:
        raise ChecksumError("frozen decoder checksum changed during training")
    if run_dir is not None:
        if cfg.iterations % cfg.checkpoint_interval != 0 and cfg.iterations > 0:
            art.checkpoints.append(save_checkpoint(
                params, scorer, state, decoder, run_dir / f"ckpt_{cfg.iterations}.bin", cfg))
        if cfg.iterations > 0:
            art.report = evaluate_params(params, decoder, spec, cfg.eval_instances,
                                         derive_seed(cfg.seed, STREAM_EVAL))
            art.report["checksum_start"] = checksum_start
            art.report["checksum_end"] = art.checksum_end
            (run_dir / "report.json").write_text(json.dumps(art.report, indent=2, sort_keys=True) + "\n")
    return art


def _mean_breakdown(bds: list) -> dict:
    if not bds:
        return {k: None for k in ("l_grpo", "l_cl", "l_total", "kl_value", "clip_fraction")}
    rows = [b.as_row() for b in bds]
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def eval_instances(spec: TaskSpec, n: int, seed: int) -> list:
    return [generate_instance(spec, derive_seed(seed, i)) for i in range(n)]


def evaluate_params(params: PolicyParams, decoder: FrozenDecoder, spec: TaskSpec,
                    n_instances: int, seed: int) -> dict:
    """Decode each instance's distribution mean (deterministic) and score it."""
    if n_instances <= 0:
        raise ConfigError("empty evaluation")
    instances = eval_instances(spec, n_instances, seed)
    correct = valid = 0
    chunk = 256
    for start in range(0, n_instances, chunk):
        part = instances[start: start + chunk]
        dists, _ = distributions(params, part)
        for inst, dist in zip(part, dists):
            text = decode_many(decoder, dist.mu[None], inst)[0]
            correct += verify_answer(text, inst.ground_truth)
            valid += validate_structure(text)
    return {"pass_at_1": correct / n_instances, "format_valid_rate": valid / n_instances,
            "n_instances": n_instances}


def evaluate(checkpoint, task_spec: Optional[TaskSpec], n_instances: int, seed: int) -> dict:
    """Evaluate a checkpoint (path or loaded ``Checkpoint``); the decoder checksum is verified on load."""
    if n_instances <= 0:
        raise ConfigError("empty evaluation")
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    if ckpt.decoder.current_checksum() != ckpt.decoder.checksum:
        raise ChecksumError("frozen decoder parameters do not match their checksum")
    spec = task_spec or TaskSpec.from_config(ckpt.config)
    return evaluate_params(ckpt.params, ckpt.decoder, spec, n_instances, seed)


def group_diversity(params: PolicyParams, spec: TaskSpec, G: int, n_instances: int, seed: int) -> float:
    """Mean pairwise cosine of pooled group members, averaged over fresh instances."""
    instances = eval_instances(spec, n_instances, seed)
    dists, _ = distributions(params, instances)
    vals = []
    for i, (inst, dist) in enumerate(zip(instances, dists)):
        g = sample_from(dist, inst, G, derive_seed(seed, STREAM_SAMPLE, i))
        V, _ = pool_unit(g.latents)
        vals.append(mean_pairwise_cosine(V))
    return float(np.mean(vals))


def mean_reference_kl(params: PolicyParams, reference: PolicyParams, spec: TaskSpec,
                      n_instances: int, seed: int) -> float:
    from .policy import gaussian_kl

    instances = eval_instances(spec, n_instances, seed)
    p, _ = distributions(params, instances)
    q, _ = distributions(reference, instances)
    return float(np.mean([gaussian_kl(a, b) for a, b in zip(p, q)]))
