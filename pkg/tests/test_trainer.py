import json

import numpy as np
import pytest

from latentrl.core import RunConfig
from latentrl.errors import ChecksumError, ConfigError, NumericalError
from latentrl.trainer import METRIC_KEYS, evaluate, train


def test_zero_iterations(tmp_path):
    art = train(RunConfig(iterations=0), tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ckpt_0.bin", "config.resolved.json"]
    assert art.metrics == []
    assert RunConfig.from_dict(json.loads((tmp_path / "config.resolved.json").read_text())) == RunConfig(iterations=0)


def test_metrics_rows_and_sidecar(tmp_path):
    cfg = RunConfig(iterations=4, G=8, K=2)
    art = train(cfg, tmp_path)
    rows = [json.loads(l) for l in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert [r["iter"] for r in rows] == [1, 2, 3, 4]
    assert tuple(rows[0]) == METRIC_KEYS
    timing = [json.loads(l) for l in (tmp_path / "timing.jsonl").read_text().splitlines()]
    assert all(t["wall_ms"] > 0 for t in timing)
    for r in rows:
        assert r["assistant_forwards"] == cfg.G * cfg.batch_instances
        assert r["main_forwards"] == cfg.G * cfg.batch_instances
        assert r["l_total"] == pytest.approx(r["l_grpo"] + cfg.gamma * r["l_cl"])
        # one update per batch: every ratio is 1, so nothing is clipped
        assert r["clip_fraction"] == 0.0
    assert art.report["n_instances"] == cfg.eval_instances
    assert art.checksum_start == art.checksum_end


def test_selective_forward_counts():
    cfg = RunConfig(iterations=6, G=12, K=3, decode_mode="selective", scorer_warmup=2, batch_instances=1)
    art = train(cfg)
    assert [r["main_forwards"] for r in art.metrics] == [12, 12, 3, 3, 3, 3]
    assert all(r["assistant_forwards"] == 12 for r in art.metrics)


def test_multiple_updates_can_clip():
    art = train(RunConfig(iterations=15, updates_per_batch=4, lr_assistant=1e-2, lr_projection=1e-2))
    assert max(r["clip_fraction"] for r in art.metrics) > 0.0


def test_deterministic(tmp_path):
    cfg = RunConfig(iterations=5, decode_mode="selective", scorer_warmup=2)
    train(cfg, tmp_path / "a")
    train(cfg, tmp_path / "b")
    assert (tmp_path / "a/metrics.jsonl").read_bytes() == (tmp_path / "b/metrics.jsonl").read_bytes()
    assert (tmp_path / "a/ckpt_5.bin").read_bytes() == (tmp_path / "b/ckpt_5.bin").read_bytes()


def test_evaluate(tmp_path):
    train(RunConfig(iterations=1), tmp_path)
    a = evaluate(tmp_path / "ckpt_1.bin", None, 50, 3)
    assert a == evaluate(tmp_path / "ckpt_1.bin", None, 50, 3)
    assert set(a) >= {"pass_at_1", "format_valid_rate"}
    with pytest.raises(ConfigError, match="empty evaluation"):
        evaluate(tmp_path / "ckpt_1.bin", None, 0, 3)


def test_untrained_baseline_near_chance(tmp_path):
    train(RunConfig(iterations=0), tmp_path)
    rep = evaluate(tmp_path / "ckpt_0.bin", None, 500, 0)
    assert 0.0 <= rep["pass_at_1"] <= 0.2


def test_nan_aborts_after_two(monkeypatch):
    import latentrl.trainer as tr

    def boom(*a, **k):
        raise NumericalError("non-finite loss nan")

    monkeypatch.setattr(tr, "loss_and_gradients", boom)
    with pytest.raises(NumericalError, match="twice in a row"):
        train(RunConfig(iterations=5))


def test_single_nan_is_tolerated(monkeypatch):
    import latentrl.trainer as tr

    real = tr.loss_and_gradients
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            raise NumericalError("non-finite loss nan")
        return real(*a, **k)

    monkeypatch.setattr(tr, "loss_and_gradients", flaky)
    art = train(RunConfig(iterations=4))
    assert art.metrics[1]["l_total"] is None and art.metrics[2]["l_total"] is not None


def test_decoder_tamper_detected(monkeypatch):
    import latentrl.trainer as tr

    real = tr.FrozenDecoder.current_checksum
    calls = {"n": 0}

    def drifting(self):
        calls["n"] += 1
        return real(self) if calls["n"] < 3 else "0" * 64

    monkeypatch.setattr(tr.FrozenDecoder, "current_checksum", drifting)
    with pytest.raises(ChecksumError):
        train(RunConfig(iterations=5))


def test_trainable_decoder_changes_checksum():
    art = train(RunConfig(iterations=3), trainable_decoder=True)
    assert art.checksum_start != art.checksum_end


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        train(RunConfig(K=20))


@pytest.mark.slow
def test_reward_trend_over_seeds():
    for seed in range(3):
        art = train(RunConfig(seed=seed, iterations=600))
        r = np.array([m["mean_reward"] for m in art.metrics])
        k = len(r) // 10
        assert r[-k:].mean() > r[:k].mean()
