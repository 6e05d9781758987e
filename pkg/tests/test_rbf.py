import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlsbpg.core import PerformanceMap, update_map
from tlsbpg.errors import ConfigurationError, EmptyFit
from tlsbpg.rbf import (
    LatentHistory,
    RbfConfig,
    RbfLatent,
    basis,
    fit_latent,
    latent_from_map,
    latent_sw_loss,
    ls_gradient,
    ls_objective,
    map_samples,
    rbf_eval,
    similarity,
    similarity_matrix,
    utility_with_latent,
    write_similarity_csv,
)

GRID = RbfConfig.grid(2, 3)


def synthetic(theta_a, theta_u, config, n=15):
    axis = np.linspace(0, 1, n)
    states = np.array([(x, y) for x in axis for y in axis])
    phi = basis(config, states)
    return [(s, float(pa), float(pu)) for s, pa, pu in zip(states, phi @ theta_a, phi @ theta_u)]


def test_grid_layout():
    assert GRID.J == 9 and GRID.dim == 2
    assert GRID.sigma == pytest.approx(0.5 / 3)
    np.testing.assert_allclose(sorted(set(GRID.centers[:, 0])), [1 / 6, 0.5, 5 / 6])
    line = RbfConfig.with_latent_size(1, 9)
    assert line.J == 9 and line.dim == 1
    with pytest.raises(ConfigurationError):
        RbfConfig.with_latent_size(2, 8)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=2))
def test_partition_of_unity(state):
    assert basis(GRID, state).sum() == pytest.approx(1.0, abs=1e-12)


def test_rbf_eval_examples():
    const = RbfLatent(np.full(9, 0.3), np.full(9, -1.0))
    for s in ([0, 0], [0.4, 0.9], [1, 1]):
        a, u = rbf_eval(const, GRID, s)
        assert a == pytest.approx(0.3) and u == pytest.approx(-1.0)
    one = RbfConfig(np.array([[0.5, 0.5]]), 0.2)
    assert rbf_eval(RbfLatent([0.7], [0.1]), one, [0.0, 1.0]) == pytest.approx((0.7, 0.1))
    hot = RbfLatent(np.eye(9)[4], np.zeros(9))
    peak = rbf_eval(hot, GRID, GRID.centers[4])[0]
    assert all(peak >= rbf_eval(hot, GRID, c)[0] for c in GRID.centers)


def test_fit_recovers_known_weights():
    rng = np.random.default_rng(3)
    ta, tu = rng.uniform(0, 1, 9), rng.uniform(-2, 3, 9)
    lat = fit_latent(synthetic(ta, tu, GRID), GRID)
    assert np.abs(lat.theta_action - ta).max() < 1e-4
    assert np.abs(lat.theta_utility - tu).max() < 1e-4


def test_fit_single_sample_and_constant():
    one = RbfConfig(np.array([[0.5]]), 0.3)
    lat = fit_latent([([0.2], 0.6, 1.5)], one)
    assert lat.theta_action[0] == pytest.approx(0.6, abs=1e-5)
    lat = fit_latent(synthetic(np.full(9, 0.4), np.full(9, 0.4), GRID, n=25), GRID)
    assert np.abs(lat.theta_action - 0.4).max() < 1e-3
    with pytest.raises(EmptyFit):
        fit_latent([], GRID)


def test_fit_matches_direct_least_squares():
    rng = np.random.default_rng(5)
    samples = [(rng.uniform(0, 1, 2), rng.uniform(), rng.uniform()) for _ in range(40)]
    lat = fit_latent(samples, GRID, lam=1e-6)
    phi = basis(GRID, np.array([s for s, _, _ in samples]))
    y = np.array([a for _, a, _ in samples])
    aug = np.vstack([phi, np.sqrt(1e-6) * np.eye(9)])
    ref, *_ = np.linalg.lstsq(aug, np.concatenate([y, np.zeros(9)]), rcond=None)
    np.testing.assert_allclose(lat.theta_action, ref, atol=1e-6)
    assert ls_objective(lat.theta_action, phi, y) <= ls_objective(np.zeros(9), phi, y)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    phi = basis(GRID, rng.uniform(0, 1, (30, 2)))
    y = rng.uniform(0, 1, 30)
    for _ in range(5):
        theta = rng.normal(size=9)
        g = ls_gradient(theta, phi, y)
        h = 1e-6
        fd = np.array([
            (ls_objective(theta + h * e, phi, y) - ls_objective(theta - h * e, phi, y)) / (2 * h)
            for e in np.eye(9)
        ])
        assert np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1e-8)) < 1e-5


def test_similarity_examples():
    a = RbfLatent(np.zeros(9), np.zeros(9))
    b = RbfLatent(np.r_[0.1, np.zeros(8)], np.zeros(9))
    assert similarity(a, a) == 0.0
    assert similarity(a, b) == pytest.approx(0.01)
    with pytest.raises(ConfigurationError):
        similarity(a, RbfLatent(np.zeros(4), np.zeros(4)))


@settings(max_examples=30)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_similarity_matrix_symmetric(n, seed):
    rng = np.random.default_rng(seed)
    lats = [RbfLatent(rng.normal(size=9), rng.normal(size=9)) for _ in range(n)]
    mat, ranked = similarity_matrix(lats)
    assert (mat == mat.T).all() and (np.diag(mat) == 0).all() and (mat >= 0).all()
    vals = [mat[i, j] for i, j in ranked]
    assert vals == sorted(vals)


def test_similarity_matrix_ranking():
    a = RbfLatent(np.ones(9), np.ones(9))
    far = RbfLatent(np.full(9, 5.0), np.zeros(9))
    mat, ranked = similarity_matrix([a, a, far])
    assert mat[0, 1] == 0.0
    assert ranked[0] == (0, 1)


def test_latent_loss_examples():
    base = RbfLatent(np.zeros(9), np.zeros(9), 0)
    shifted = RbfLatent(np.r_[0.1, np.zeros(8)], np.zeros(9), 0)
    hi, hn, hs = LatentHistory(10), LatentHistory(10), LatentHistory(10)
    for t in range(10):
        hi.append(RbfLatent(base.theta_action, base.theta_utility, t))
        hn.append(RbfLatent(base.theta_action, base.theta_utility, t))
        hs.append(RbfLatent(shifted.theta_action, shifted.theta_utility, t))
    assert latent_sw_loss(hi, hn, 10) == 0.0
    assert latent_sw_loss(hi, hs, 10) == pytest.approx(0.1)
    assert latent_sw_loss(hi, hs, 1) == pytest.approx(similarity(base, shifted))
    with pytest.raises(ConfigurationError):
        latent_sw_loss(hi, hs, 0)


def test_history_order_enforced():
    h = LatentHistory(3)
    h.append(RbfLatent(np.zeros(2), np.zeros(2), 5))
    with pytest.raises(ConfigurationError):
        h.append(RbfLatent(np.zeros(2), np.zeros(2), 4))


def test_utility_with_latent_examples():
    assert utility_with_latent(2.0, [0.0, 0.0], [5.0, 1.0], 3) == 2.0
    assert utility_with_latent(2.0, [1.0], [0.3], 2) == pytest.approx(1.7)
    assert utility_with_latent(2.0, [0.5, 0.5], [0.2, 0.2], 3) == pytest.approx(1.9)
    with pytest.raises(ConfigurationError):
        utility_with_latent(2.0, [], [], 1)


def test_similarity_csv(tmp_path):
    p = tmp_path / "sim.csv"
    write_similarity_csv(p, ["a", "b"], np.array([[0.0, 0.5], [0.5, 0.0]]))
    assert p.read_text().splitlines() == ["player,a,b", "a,0,0.5", "b,0.5,0"]


def test_map_samples_and_override():
    m = PerformanceMap(2, 10)
    update_map(m, [0.05, 0.95], 0.2, 1.5)
    update_map(m, [0.55, 0.15], 0.7, -2.0)
    centers, actions, utilities = map_samples(m)
    ref = list(m.filled_cells())
    np.testing.assert_array_equal(centers, [c for c, _, _ in ref])
    np.testing.assert_array_equal(actions, [a for _, a, _ in ref])
    np.testing.assert_array_equal(utilities, [u for _, _, u in ref])
    over = np.full(m.shape, np.nan)
    over[m.index_of([0.55, 0.15])] = 9.0
    assert sorted(map_samples(m, over)[2]) == [1.5, 9.0]
    lat = latent_from_map(m, GRID)
    ref_lat = fit_latent(ref, GRID)
    np.testing.assert_allclose(lat.stacked(), ref_lat.stacked(), atol=1e-12)
