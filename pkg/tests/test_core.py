import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from latentrl.core import (
    LatentTrajectory, RunConfig, TaskInstance, TrajectoryGroup, derive_seed, load_config,
    make_rng, validate_config,
)
from latentrl.errors import ConfigError, ShapeError


def test_table2_scale_config_accepted():
    cfg = RunConfig(d=512, G=64, K=12, beta=0.01, gamma=0.1, T=32,
                    lr_assistant=3e-5, lr_projection=1e-4)
    assert validate_config(cfg) is cfg


@pytest.mark.parametrize("changes, message", [
    ({"G": 0, "K": 0}, "G must be ≥ 1"),
    ({"K": 70, "G": 64}, "K must be ≤ G"),
    ({"d": 0}, "d must be ≥ 1"),
    ({"eps_clip": 1.0}, "eps_clip must lie in (0, 1)"),
    ({"eps_clip": 0.0}, "eps_clip must lie in (0, 1)"),
    ({"beta": -0.1}, "beta must be nonnegative"),
    ({"decode_mode": "partial"}, "decode_mode"),
    ({"T": 40}, "T must be ≤ max_latent_steps"),
    ({"G": 1, "K": 1}, "at least 2 decoded members"),
    ({"scorer_lr": 1.5}, "scorer_lr must be ≤ 1"),
])
def test_validate_config_rejects(changes, message):
    with pytest.raises(ConfigError) as exc:
        validate_config(RunConfig().replace(**changes))
    assert message in str(exc.value)


def test_first_violation_is_named():
    with pytest.raises(ConfigError, match="d must be ≥ 1"):
        validate_config(RunConfig(G=0, K=0, d=0))


@given(d=st.integers(1, 64), G=st.integers(2, 64), lam=st.floats(0, 5), seed=st.integers(0, 2**64 - 1))
def test_config_round_trip(d, G, lam, seed):
    cfg = validate_config(RunConfig(d=d, G=G, K=min(3, G), lam=lam, seed=seed))
    back = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert back == cfg


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        RunConfig.from_dict({"group_size": 4})


def test_wrong_type_rejected():
    with pytest.raises(ConfigError, match="G must be of type int"):
        RunConfig.from_dict({"G": 2.5})


def test_load_config_yaml_and_nested_task(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("G: 8\nK: 2\ntask:\n  kind: mod_arith\n  modulus: 7\n", encoding="utf-8")
    cfg = load_config(p, {"seed": 5})
    assert (cfg.G, cfg.K, cfg.modulus, cfg.task_kind, cfg.seed) == (8, 2, 7, "mod_arith", 5)


def test_load_config_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"d": 8, "gamma": 0.0}))
    assert load_config(p).d == 8


def test_missing_config_names_path(tmp_path):
    missing = tmp_path / "nope.yaml"
    with pytest.raises(ConfigError, match="nope.yaml"):
        load_config(missing)


def test_seed_determinism():
    a = make_rng(derive_seed(42, 3, 1)).standard_normal(1000)
    b = make_rng(derive_seed(42, 3, 1)).standard_normal(1000)
    assert np.array_equal(a, b)
    c = make_rng(derive_seed(42, 3, 2)).standard_normal(1000)
    assert not np.array_equal(a, c)


def test_trajectory_invariants():
    t = LatentTrajectory(np.zeros((3, 2)))
    assert (t.T, t.d) == (3, 2)
    with pytest.raises(ValueError):
        t.steps[0, 0] = 1.0
    with pytest.raises(ShapeError):
        LatentTrajectory(np.array([[np.nan, 0.0]]))
    with pytest.raises(ShapeError):
        LatentTrajectory(np.zeros(3))


def test_task_instance_answer_space():
    with pytest.raises(ConfigError):
        TaskInstance("c", "q", "16", 16)
    assert TaskInstance("c", "q", "15", 16).modulus == 16


def _group(G=3):
    inst = TaskInstance("c", "q", "1", 4)
    z = np.zeros((G, 2, 2))
    return inst, z


def test_group_parallel_lengths():
    inst, z = _group()
    g = TrajectoryGroup(inst, z, z, np.zeros(3), np.zeros(3))
    assert g.G == 3 and len(g.trajectories) == 3
    assert np.all(np.isnan(g.advantages)) and not g.decode_mask.any()
    with pytest.raises(ShapeError, match="length G"):
        TrajectoryGroup(inst, z, z, np.zeros(2), np.zeros(3))


def test_group_advantage_requires_reward():
    inst, z = _group()
    with pytest.raises(ShapeError, match="advantage present without a reward"):
        TrajectoryGroup(inst, z, z, np.zeros(3), np.zeros(3), advantages=np.array([0.0, np.nan, np.nan]))
