import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlsbpg.core import (
    DecaySchedule,
    PerformanceMap,
    PlayerAgent,
    cell_center,
    decay_epsilon,
    discretize,
    interpolate_action,
    select_action,
    update_map,
)
from tlsbpg.errors import ConfigurationError, InvalidUtility, NoKnowledge, PolicyLoadError


def floor_bin(v, B):
    # exact rational floor, independent of float rounding in v*B
    return min(math.floor(Fraction(v) * B), B - 1)


def test_discretize_boundaries():
    assert discretize([0.0], 40) == (0,)
    assert discretize([1.0], 40) == (39,)
    assert discretize([0.5], 40) == (20,)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=3), st.integers(2, 64))
def test_discretize_matches_reference(state, B):
    for got, v in zip(discretize(state, B), state):
        ref = floor_bin(v, B)
        # v*B may round onto the next integer when it lies within an ulp of it
        assert got == ref or (got == ref + 1 and abs(Fraction(v) * B - got) < 1e-12)


@given(st.integers(2, 50), st.data())
def test_center_round_trip(B, data):
    idx = tuple(data.draw(st.integers(0, B - 1)) for _ in range(2))
    assert discretize(cell_center(idx, B), B) == idx


def test_discretize_rejects_out_of_range():
    with pytest.raises(ConfigurationError):
        discretize([1.2], 40)
    with pytest.raises(ConfigurationError):
        discretize([float("nan")], 40)


def test_map_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        PerformanceMap(2).index_of([0.5])


def test_interpolate_single_support():
    m = PerformanceMap(2)
    update_map(m, [0.1, 0.9], 0.7, 1.0)
    for s in ([0.0, 0.0], [0.5, 0.5], [1.0, 0.2]):
        assert interpolate_action(m, s) == pytest.approx(0.7)


def test_interpolate_exact_hit():
    m = PerformanceMap(1, 40)
    update_map(m, [cell_center((3,), 40)[0]], 0.3, 1.0)
    update_map(m, [0.9], 0.9, 1.0)
    assert interpolate_action(m, cell_center((3,), 40)) == 0.3


def test_interpolate_equidistant():
    m = PerformanceMap(1, 10)
    update_map(m, [0.25], 0.2, 1.0)   # center 0.25
    update_map(m, [0.75], 0.8, 1.0)   # center 0.75
    d2 = 0.25**2
    w = 1.0 / (d2 + 1e-9)
    assert interpolate_action(m, [0.5]) == pytest.approx((w * 0.2 + w * 0.8) / (2 * w))


def test_interpolate_empty_map():
    with pytest.raises(NoKnowledge):
        interpolate_action(PerformanceMap(2), [0.5, 0.5])


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=30),
       st.tuples(st.floats(0, 1), st.floats(0, 1)))
def test_interpolation_is_convex(entries, query):
    m = PerformanceMap(2, 10)
    for x, y, a in entries:
        update_map(m, [x, y], a, 1.0)
    _, actions = m.support()
    v = interpolate_action(m, list(query))
    assert actions.min() - 1e-12 <= v <= actions.max() + 1e-12


def test_update_map_rules():
    m = PerformanceMap(1)
    assert update_map(m, [0.5], 0.1, 0.4)
    assert not update_map(m, [0.5], 0.2, 0.4)
    update_map(m, [0.5], 0.3, 0.9)
    assert not update_map(m, [0.5], 0.6, 0.9)
    assert m.cell(m.index_of([0.5])) == (0.3, 0.9)
    with pytest.raises(InvalidUtility):
        update_map(m, [0.5], 0.3, float("nan"))


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
def test_update_is_fold_max(utils):
    m = PerformanceMap(1)
    for k, u in enumerate(utils):
        update_map(m, [0.42], (k % 10) / 10, u)
    assert m.cell(m.index_of([0.42]))[1] == max(utils)


def test_update_sequence_example():
    m = PerformanceMap(1)
    for u in (0.2, 0.5, 0.3):
        update_map(m, [0.1], 0.5, u)
    assert m.cell(m.index_of([0.1]))[1] == 0.5


def test_select_action_exploration_rates():
    a = PlayerAgent("p", 1, epsilon=1.0, rng=np.random.default_rng(0))
    update_map(a.map, [0.5], 0.4, 1.0)
    assert all(select_action(a, [0.5])[1] for _ in range(200))

    a.epsilon = 0.5
    explored = sum(select_action(a, [0.5])[1] for _ in range(10_000))
    assert 0.48 <= explored / 10_000 <= 0.52


def test_select_action_greedy_is_deterministic():
    a = PlayerAgent("p", 2, epsilon=0.0, rng=np.random.default_rng(0))
    update_map(a.map, [0.1, 0.2], 0.25, 1.0)
    update_map(a.map, [0.8, 0.6], 0.75, 1.0)
    first = [select_action(a, [x, 0.5]) for x in np.linspace(0, 1, 7)]
    again = [select_action(a, [x, 0.5]) for x in np.linspace(0, 1, 7)]
    assert first == again
    assert not any(e for _, e in first)


def test_select_action_explores_without_knowledge():
    a = PlayerAgent("p", 1, epsilon=0.0, rng=np.random.default_rng(0))
    action, explored = select_action(a, [0.3])
    assert explored and 0.0 <= action <= 1.0


def test_decay_schedule():
    s = DecaySchedule(1.0, 0.999, 0.02)
    assert s.value(0) == 1.0
    assert s.value(10**7) == 0.02
    assert s.value(1000) == pytest.approx(float(Fraction(999, 1000) ** 1000), abs=1e-3)
    assert s.value(1000) == pytest.approx(0.3677, abs=1e-3)


def test_decay_reaches_floor_at_fraction():
    s = DecaySchedule.reaching_floor(10_000, 0.8)
    assert s.value(8000) == pytest.approx(0.02, rel=1e-9)
    assert s.value(7000) > 0.02
    agent = PlayerAgent("p", 1)
    assert decay_epsilon(agent, 8000, s) == agent.epsilon == pytest.approx(0.02)


def test_map_save_load_round_trip(tmp_path):
    m = PerformanceMap(2, 8)
    update_map(m, [0.1, 0.9], 0.25, 1.5)
    update_map(m, [0.7, 0.3], 0.75, -2.0)
    p = tmp_path / "m.map"
    m.save(p)
    back = PerformanceMap.load(p)
    assert back.dim == 2 and back.bins_per_dim == 8
    np.testing.assert_array_equal(back.best_utility, m.best_utility)
    np.testing.assert_array_equal(np.nan_to_num(back.best_action, nan=-1), np.nan_to_num(m.best_action, nan=-1))
    assert interpolate_action(back, [0.4, 0.4]) == interpolate_action(m, [0.4, 0.4])


def test_map_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.map"
    p.write_text("not a map\n1 2\n")
    with pytest.raises(PolicyLoadError):
        PerformanceMap.load(p)
    with pytest.raises(PolicyLoadError):
        PerformanceMap.load(tmp_path / "missing.map")
