import itertools
import math

import numpy as np
import pytest

from tlsbpg.errors import ConfigurationError
from tlsbpg.oracle import (
    TinyGame,
    brute_force_ne,
    certify_convergence,
    check_cross_partials,
    check_exact_pg,
    check_state_independence,
    coordination_game,
    is_ne,
    mixed_partial,
    mom_pair_loss,
    sw_pair_loss,
    sw_pair_loss_swapped,
    transfer_game,
    verify_suite,
    write_report_csv,
)


def test_sw_h1_partial_is_minus_two():
    rep = check_cross_partials(sw_pair_loss(1), samples=100, h=1e-4)
    assert rep.ok and rep.max_asymmetry < 1e-6
    assert rep.mixed_partial_mean == pytest.approx(-2.0, abs=1e-4)


@pytest.mark.parametrize("H", [1, 5, 10])
def test_sw_symmetric(H):
    rep = check_cross_partials(sw_pair_loss(H, 3), samples=100, h=1e-4,
                               loss_ji=sw_pair_loss_swapped(H, 3))
    assert rep.ok


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_mom_current_term(alpha):
    rep = check_cross_partials(mom_pair_loss(alpha), samples=100, h=1e-4)
    assert rep.ok
    assert rep.mixed_partial_mean == pytest.approx(-2.0 * (1.0 - alpha), abs=1e-4)


def test_detector_flags_asymmetric_loss():
    rep = check_cross_partials(lambda x, y: x**2 * y**3, samples=100, h=1e-4)
    assert not rep.ok and rep.max_asymmetry > 1e-2


def test_step_bounds():
    f = lambda x, y: x * y
    for h in (1e-7, 0.05):
        with pytest.raises(ConfigurationError):
            check_cross_partials(f, h=h)
    with pytest.raises(ConfigurationError):
        check_cross_partials(f, samples=0)


def test_points_stay_interior():
    seen = []

    def f(x, y):
        seen.append((x, y))
        return x * y

    check_cross_partials(f, samples=200, h=1e-3)
    arr = np.array(seen)
    assert arr.min() >= 0.0 and arr.max() <= 1.0


def test_mixed_partial_second_order():
    # quadratic losses are differenced exactly, so the order is checked on a smooth function
    f = lambda x, y: math.sin(3 * x) * math.exp(2 * y)
    exact = 3 * math.cos(3 * 0.4) * 2 * math.exp(2 * 0.6)
    errs = [abs(mixed_partial(f, 0.4, 0.6, h) - exact) for h in (4e-2, 2e-2, 1e-2)]
    for coarse, fine in zip(errs, errs[1:]):
        assert coarse / fine == pytest.approx(4.0, rel=0.05)


def test_exact_pg_examples():
    grid = np.linspace(0, 1, 7)
    sep = TinyGame([grid, grid], [lambda j, s: j[0] ** 2, lambda j, s: -j[1]])
    assert check_exact_pg(sep, lambda j, s: j[0] ** 2 - j[1]).max_pg_residual < 1e-15
    game, phi = transfer_game(0.7)
    rep = check_exact_pg(game, phi)
    assert rep.ok and rep.max_pg_residual < 1e-12
    bad = check_exact_pg(game, lambda j, s: phi(j, s) + 0.1 * j[0] * j[1])
    assert not bad.ok and bad.max_pg_residual > 1e-3


def test_exact_pg_over_states():
    grid = np.linspace(0, 1, 5)
    u = lambda j, s: -(j[0] - s) ** 2 - (j[0] - j[1]) ** 2
    v = lambda j, s: -(j[1] + s) ** 2 - (j[0] - j[1]) ** 2
    phi = lambda j, s: -(j[0] - s) ** 2 - (j[1] + s) ** 2 - (j[0] - j[1]) ** 2
    game = TinyGame([grid, grid], [u, v], states=(0.0, 0.5, 1.0))
    rep = check_exact_pg(game, phi)
    assert rep.ok and rep.samples == 3 * 25 * 8


def test_coordination_ne_is_diagonal():
    game = coordination_game(11)
    ne = brute_force_ne(game)
    assert sorted(ne) == sorted((v, v) for v in game.levels[0])


def test_single_player_and_constant_games():
    grid = np.linspace(0, 1, 11)
    one = TinyGame([grid], [lambda j, s: -(j[0] - 0.3) ** 2])
    assert brute_force_ne(one) == [(pytest.approx(0.3),)]
    flat = TinyGame([grid[:4], grid[:3], grid[:2]], [lambda j, s: 1.0] * 3)
    assert len(brute_force_ne(flat)) == 4 * 3 * 2


def test_no_pure_ne():
    # matching pennies
    u = lambda j, s: 1.0 if j[0] == j[1] else -1.0
    game = TinyGame([[0.0, 1.0], [0.0, 1.0]], [u, lambda j, s: -u(j, s)])
    assert brute_force_ne(game) == []
    assert not certify_convergence(game, max_rounds=10)


def test_ne_invariant_under_reordering():
    rng = np.random.default_rng(5)
    levels = [np.linspace(0, 1, 4), np.linspace(0, 1, 3), np.linspace(0, 1, 5)]
    tables = [rng.integers(0, 3, size=(4, 3, 5)).astype(float) for _ in range(3)]

    def util(i, order):
        # joint arrives in `order`; map back to the canonical player positions
        def u(joint, s):
            canon = [None] * 3
            for pos, p in enumerate(order):
                canon[p] = int(round(joint[pos] * (len(levels[p]) - 1)))
            return tables[i][tuple(canon)]
        return u

    base = sorted(brute_force_ne(TinyGame(levels, [util(i, (0, 1, 2)) for i in range(3)])))
    assert base
    for order in itertools.permutations(range(3)):
        game = TinyGame([levels[p] for p in order], [util(p, order) for p in order])
        ne = [tuple(j[order.index(p)] for p in range(3)) for j in brute_force_ne(game)]
        assert sorted(ne) == base


def test_convergence_from_random_starts():
    game = coordination_game(11)
    phi = lambda j, s: -(j[0] - j[1]) ** 2
    ne = set(brute_force_ne(game))
    rng = np.random.default_rng(0)
    for _ in range(20):
        start = tuple(int(k) for k in rng.integers(0, 11, size=2))
        cert = certify_convergence(game, phi, start=start)
        assert cert and cert.monotone
        assert cert.trajectory[-1] in ne
        assert all(b > a for a, b in zip(cert.potentials, cert.potentials[1:]))


def test_already_at_ne_takes_zero_rounds():
    cert = certify_convergence(coordination_game(11), start=(4, 4))
    assert cert and cert.rounds == 0 and len(cert.trajectory) == 1


def test_transfer_game_convergence():
    game, phi = transfer_game(0.7)
    cert = certify_convergence(game, phi, start=(10, 0))
    assert cert and cert.monotone
    idx = tuple(int(np.argmin(abs(game.levels[i] - v))) for i, v in enumerate(cert.trajectory[-1]))
    assert is_ne(game, idx)


def test_state_independence():
    rep = check_state_independence(lambda a, b, s: (a - b) ** 2, states=[0, 1])
    assert rep.ok
    rep = check_state_independence(lambda a, b, s: (a - b) ** 2 + s, states=[0, 1])
    assert not rep.ok


def test_tiny_game_limits():
    grid = np.linspace(0, 1, 3)
    with pytest.raises(ConfigurationError):
        TinyGame([grid] * 4, [lambda j, s: 0.0] * 4)
    with pytest.raises(ConfigurationError):
        TinyGame([np.linspace(0, 1, 22)], [lambda j, s: 0.0])
    with pytest.raises(ConfigurationError):
        TinyGame([grid], [lambda j, s: 0.0], states=tuple(range(6)))
    with pytest.raises(ConfigurationError):
        TinyGame([grid, grid], [lambda j, s: 0.0])


def test_verify_suite_passes(tmp_path):
    reports = verify_suite()
    assert all(r.ok for r in reports)
    write_report_csv(tmp_path / "c.csv", reports)
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert len(rows) == 1 + sum(len(r.passed) for r in reports)
