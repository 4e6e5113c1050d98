import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from latentrl.core import LatentTrajectory, RunConfig
from latentrl.errors import ShapeError
from latentrl.policy import (
    PolicySnapshot, TrajectoryDistribution, embed_query, gaussian_kl, init_policy, log_prob,
    pool_trajectory, pool_unit, sample_from, sample_group, trajectory_distribution,
)
from latentrl.tasks import TaskSpec, generate_instance

CFG = RunConfig()
SPEC = TaskSpec("mod_arith", 16, 1)


def dist(mu, sigma):
    return TrajectoryDistribution.from_sigma(mu, sigma)


def test_embedding_deterministic_and_sized():
    inst = generate_instance(SPEC, 3)
    a, b = embed_query(inst, CFG.embed_dim), embed_query(inst, CFG.embed_dim)
    assert a.shape == (CFG.embed_dim,) and np.array_equal(a, b)


def test_embedding_separates_operands():
    rng = np.random.default_rng(0)
    for _ in range(100):
        inst = generate_instance(SPEC, int(rng.integers(2**32)))
        ops = list(inst.operands)
        j = int(rng.integers(len(ops)))
        ops[j] = (ops[j] + int(rng.integers(1, 16))) % 16
        other = inst.__class__(inst.context, inst.query, inst.ground_truth, 16, tuple(ops), inst.operators)
        assert not np.array_equal(embed_query(inst, CFG.embed_dim), embed_query(other, CFG.embed_dim))


def test_zero_projection_gives_zero_mean():
    p = init_policy(CFG)
    p.arrays["projection/Wm"][:] = 0.0
    d = trajectory_distribution(p, generate_instance(SPEC, 0))
    assert np.array_equal(d.mu, np.zeros((CFG.T, CFG.d)))


@given(seed=st.integers(0, 1000), scale=st.floats(0, 50))
def test_sigma_within_bounds(seed, scale):
    p = init_policy(CFG, seed)
    p.arrays["projection/Ws"] = np.random.default_rng(seed).standard_normal(p.arrays["projection/Ws"].shape) * scale
    s = trajectory_distribution(p, generate_instance(SPEC, seed)).sigma
    assert np.all(s >= CFG.sigma_min * (1 - 1e-12)) and np.all(s <= CFG.sigma_max * (1 + 1e-12))


def test_initial_sigma():
    s = trajectory_distribution(init_policy(CFG), generate_instance(SPEC, 0)).sigma
    np.testing.assert_allclose(s, CFG.sigma_init, rtol=1e-12)


def test_sampling_deterministic_and_degenerate():
    p, inst = init_policy(CFG), generate_instance(SPEC, 1)
    a, b = sample_group(p, inst, 5, 99), sample_group(p, inst, 5, 99)
    assert np.array_equal(a.latents, b.latents) and np.array_equal(a.logp_current, b.logp_current)
    one = sample_group(p, inst, 1, 99)
    assert one.G == 1 and np.isfinite(one.logp_current[0])
    # member i depends only on its own sub-seed
    assert np.array_equal(one.latents[0], a.latents[0])


def test_tiny_sigma_samples_at_mean():
    mu = np.random.default_rng(0).standard_normal((4, 3))
    g = sample_from(dist(mu, np.full((4, 3), 1e-6)), generate_instance(SPEC, 0), 20, 5)
    assert np.max(np.abs(g.latents - mu)) < 1e-4


def test_sampling_moments():
    mu, sigma = np.array([[0.5, -1.0]]), np.array([[0.3, 2.0]])
    g = sample_from(dist(mu, sigma), generate_instance(SPEC, 0), 100_000, 17)
    z = g.latents.reshape(-1, 2)
    se_mean = sigma[0] / np.sqrt(z.shape[0])
    assert np.all(np.abs(z.mean(axis=0) - mu[0]) < 3 * se_mean)
    se_std = sigma[0] / np.sqrt(2 * z.shape[0])
    assert np.all(np.abs(z.std(axis=0) - sigma[0]) < 3 * se_std)


def test_log_prob_values():
    assert log_prob(dist([[0.0]], [[1.0]]), np.zeros((1, 1))) == pytest.approx(-0.918939, abs=1e-6)
    assert log_prob(dist(np.zeros((2, 2)), np.ones((2, 2))), np.zeros((2, 2))) == pytest.approx(4 * -0.918939, abs=1e-5)


@given(seed=st.integers(0, 10_000))
def test_log_prob_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    mu, sigma = rng.standard_normal((3, 2)), rng.uniform(0.05, 3, (3, 2))
    z = rng.standard_normal((3, 2)) * 2
    want = stats.norm.logpdf(z, mu, sigma).sum()
    assert log_prob(dist(mu, sigma), LatentTrajectory(z)) == pytest.approx(want, rel=1e-12, abs=1e-12)
    assert log_prob(dist(mu, sigma), mu) >= log_prob(dist(mu, sigma), z)


def test_density_integrates_to_one():
    d = dist([[0.3]], [[0.7]])
    total, _ = integrate.quad(lambda x: np.exp(log_prob(d, np.array([[x]]))), 0.3 - 8 * 0.7, 0.3 + 8 * 0.7,
                              epsabs=1e-12)
    assert abs(total - 1.0) <= 1e-6


def test_log_prob_shape_mismatch():
    with pytest.raises(ShapeError):
        log_prob(dist(np.zeros((2, 2)), np.ones((2, 2))), np.zeros((3, 2)))


def test_kl_values():
    p = dist(np.ones((1, 1)), np.ones((1, 1)))
    q = dist(np.zeros((1, 1)), np.ones((1, 1)))
    assert gaussian_kl(p, q) == pytest.approx(0.5, abs=1e-12)
    assert gaussian_kl(p, p) == 0.0
    with pytest.raises(ShapeError):
        gaussian_kl(p, dist(np.zeros((2, 1)), np.ones((2, 1))))


@given(seed=st.integers(0, 10_000))
def test_kl_matches_quadrature_and_gibbs(seed):
    rng = np.random.default_rng(seed)
    mp, mq = rng.standard_normal(2)
    sp, sq = rng.uniform(0.3, 2, 2)
    p, q = dist([[mp]], [[sp]]), dist([[mq]], [[sq]])
    f = lambda x: stats.norm.pdf(x, mp, sp) * (stats.norm.logpdf(x, mp, sp) - stats.norm.logpdf(x, mq, sq))
    want, _ = integrate.quad(f, mp - 12 * sp, mp + 12 * sp, epsabs=1e-12)
    assert gaussian_kl(p, q) == pytest.approx(want, abs=1e-7)
    assert gaussian_kl(p, q) >= 0.0


def test_kl_zero_iff_equal_on_grid():
    for m in (-1.0, 0.0, 0.5):
        for s in (0.5, 1.0, 2.0):
            for m2 in (-1.0, 0.0, 0.5):
                for s2 in (0.5, 1.0, 2.0):
                    kl = gaussian_kl(dist([[m]], [[s]]), dist([[m2]], [[s2]]))
                    assert (kl == 0.0) == (m == m2 and s == s2)


def test_pooling():
    np.testing.assert_allclose(pool_trajectory(np.array([[3.0, 4.0]])), [0.6, 0.8])
    np.testing.assert_allclose(pool_trajectory(np.array([[2.0, 0.0], [0.0, 2.0]])), [2**-0.5, 2**-0.5])
    assert np.array_equal(pool_trajectory(np.array([[1.0, 2.0], [-1.0, -2.0]])), [1.0, 0.0])


@given(seed=st.integers(0, 10_000))
def test_pool_unit_norm(seed):
    V, _ = pool_unit(np.random.default_rng(seed).standard_normal((5, 3, 4)))
    np.testing.assert_allclose(np.linalg.norm(V, axis=1), 1.0, atol=1e-9)


def test_snapshot_read_only_and_parameter_count():
    p = init_policy(CFG)
    snap = PolicySnapshot.take(p, "reference")
    with pytest.raises(ValueError):
        snap.params.arrays["assistant/W1"][0, 0] = 1.0
    with pytest.raises(ValueError):
        PolicySnapshot.take(p, "current")
    E, H, n = CFG.embed_dim, CFG.hidden, CFG.T * CFG.d
    assert p.n_params == H * E + H + H * H + H + 2 * (n * H + n)
    assert init_policy(CFG).digest() == p.digest()
