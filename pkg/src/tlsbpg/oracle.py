"""Independent checks for potential-game structure on small problems.

Finite differences test whether pairwise transfer losses have symmetric mixed
partials, exhaustive enumeration checks exact-potential residuals and finds
pure Nash equilibria, and sequential best response is run to a fixed point
with the potential logged along the way.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError
from .transfer import MomState, mom_loss, sw_loss

FD_TOL = 1e-6
ENUM_TOL = 1e-12


@dataclass
class TinyGame:
    """Enumerable game: ``utilities[i](joint, state) -> float``.

    ``joint`` is a tuple of action values, one per player.  ``states`` defaults
    to a single ``None`` state.
    """

    levels: Sequence[Sequence[float]]
    utilities: Sequence[Callable]
    states: Sequence = (None,)
    transition: Callable | None = None

    def __post_init__(self):
        self.levels = [np.asarray(l, dtype=float) for l in self.levels]
        if not 1 <= len(self.levels) <= 3:
            raise ConfigurationError("a tiny game has one to three players")
        if len(self.utilities) != len(self.levels):
            raise ConfigurationError("need one utility per player")
        if any(not 1 <= len(l) <= 21 for l in self.levels):
            raise ConfigurationError("each player needs 1..21 action levels")
        if not 1 <= len(self.states) <= 5:
            raise ConfigurationError("a tiny game has one to five states")

    @property
    def n_players(self) -> int:
        return len(self.levels)

    def joints(self):
        """All joint actions as index tuples."""
        return itertools.product(*(range(len(l)) for l in self.levels))

    def values(self, idx) -> tuple[float, ...]:
        return tuple(float(self.levels[i][k]) for i, k in enumerate(idx))

    def utility(self, i: int, idx, state=None) -> float:
        return float(self.utilities[i](self.values(idx), state))


@dataclass
class ConditionReport:
    max_asymmetry: float = 0.0
    max_pg_residual: float = 0.0
    samples: int = 0
    mixed_partial_mean: float = float("nan")
    passed: dict = field(default_factory=dict)
    label: str = ""

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def merge(self, other: "ConditionReport") -> "ConditionReport":
        out = ConditionReport(
            max_asymmetry=max(self.max_asymmetry, other.max_asymmetry),
            max_pg_residual=max(self.max_pg_residual, other.max_pg_residual),
            samples=self.samples + other.samples,
            label=self.label,
        )
        out.passed = {**self.passed, **{f"{other.label}:{k}" if other.label else k: v
                                         for k, v in other.passed.items()}}
        return out


def mixed_partial(f: Callable[[float, float], float], x: float, y: float, h: float) -> float:
    """Central-difference estimate of d2f / dx dy."""
    return (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4.0 * h * h)


def check_cross_partials(loss: Callable[[float, float], float], samples: int = 100,
                         h: float = 1e-4, seed: int = 0, tol: float = FD_TOL,
                         label: str = "", loss_ji: Callable | None = None) -> ConditionReport:
    """Compare d2 H_ij(a_i, a_j)/da_i da_j with d2 H_ji(a_j, a_i)/da_j da_i.

    ``loss_ji`` is the partner's loss with its own action first; by default the
    same formula is reused, as for the symmetric transfer losses.  Points are
    drawn from ``[h, 1 - h]`` so every stencil stays inside the unit square.
    """
    loss_ji = loss if loss_ji is None else loss_ji
    if not 1e-6 < h < 1e-2:
        raise ConfigurationError(f"step h must lie in (1e-6, 1e-2), got {h}")
    if samples < 1:
        raise ConfigurationError("need at least one sample point")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(h, 1.0 - h, size=(samples, 2))
    worst = 0.0
    partials = []
    for a_i, a_j in pts:
        d_ij = mixed_partial(loss, a_i, a_j, h)
        d_ji = mixed_partial(loss_ji, a_j, a_i, h)
        worst = max(worst, abs(d_ij - d_ji))
        partials.append(d_ij)
    rep = ConditionReport(max_asymmetry=worst, samples=samples,
                          mixed_partial_mean=float(np.mean(partials)), label=label)
    rep.passed["cross_partials"] = worst < tol
    return rep


def check_exact_pg(game: TinyGame, potential_fn: Callable, tol: float = ENUM_TOL,
                   label: str = "") -> ConditionReport:
    """Max over states, players and unilateral deviations of ``|dU_i - dphi|``."""
    worst = 0.0
    count = 0
    for state in game.states:
        for idx in game.joints():
            phi0 = potential_fn(game.values(idx), state)
            for i in range(game.n_players):
                u0 = game.utility(i, idx, state)
                for k in range(len(game.levels[i])):
                    if k == idx[i]:
                        continue
                    dev = idx[:i] + (k,) + idx[i + 1:]
                    du = game.utility(i, dev, state) - u0
                    dphi = potential_fn(game.values(dev), state) - phi0
                    worst = max(worst, abs(du - dphi))
                    count += 1
    rep = ConditionReport(max_pg_residual=worst, samples=count, label=label)
    rep.passed["exact_pg"] = worst < tol
    return rep


def _best_responses(game: TinyGame, i: int, idx, state) -> tuple[list[int], float]:
    vals = []
    for k in range(len(game.levels[i])):
        dev = idx[:i] + (k,) + idx[i + 1:]
        vals.append(game.utility(i, dev, state))
    best = max(vals)
    return [k for k, v in enumerate(vals) if v >= best - ENUM_TOL], best


def is_ne(game: TinyGame, idx, state=None, tol: float = ENUM_TOL) -> bool:
    for i in range(game.n_players):
        u0 = game.utility(i, idx, state)
        for k in range(len(game.levels[i])):
            dev = idx[:i] + (k,) + idx[i + 1:]
            if game.utility(i, dev, state) > u0 + tol:
                return False
    return True


def brute_force_ne(game: TinyGame, state=None, tol: float = ENUM_TOL) -> list[tuple[float, ...]]:
    """All pure joint actions (as values) from which no single player gains more than ``tol``."""
    return [game.values(idx) for idx in game.joints() if is_ne(game, idx, state, tol)]


@dataclass
class Certificate:
    converged: bool
    rounds: int
    trajectory: list
    potentials: list
    monotone: bool

    def __bool__(self) -> bool:
        return self.converged


def certify_convergence(game: TinyGame, potential_fn: Callable | None = None,
                        max_rounds: int = 100, start=None, state=None) -> Certificate:
    """Sequential best response from ``start`` (index tuple) until nobody moves.

    A player only moves for a strict gain; among tied best responses the lowest
    index wins.  ``monotone`` records whether the potential strictly rose on
    every accepted move.
    """
    idx = tuple(start) if start is not None else tuple(0 for _ in game.levels)
    phi = (lambda j: potential_fn(game.values(j), state)) if potential_fn else None
    trajectory = [game.values(idx)]
    potentials = [phi(idx)] if phi else []
    monotone = True
    for rnd in range(max_rounds + 1):
        moved = False
        for i in range(game.n_players):
            cands, best = _best_responses(game, i, idx, state)
            if best <= game.utility(i, idx, state) + ENUM_TOL:
                continue
            new = idx[:i] + (cands[0],) + idx[i + 1:]
            if phi:
                p_new = phi(new)
                if not p_new > potentials[-1]:
                    monotone = False
                potentials.append(p_new)
            idx = new
            trajectory.append(game.values(idx))
            moved = True
        if not moved:
            return Certificate(is_ne(game, idx, state), rnd, trajectory, potentials, monotone)
    return Certificate(False, max_rounds, trajectory, potentials, monotone)


def check_state_independence(loss_with_state: Callable, states: Sequence, samples: int = 50,
                             seed: int = 0, label: str = "") -> ConditionReport:
    """The mixed state/action conditions hold trivially when the loss ignores the state.

    Evaluates ``loss_with_state(a_i, a_j, s)`` for every state at random action
    pairs and reports the largest spread as the residual.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for a_i, a_j in rng.uniform(0, 1, size=(samples, 2)):
        vals = [loss_with_state(a_i, a_j, s) for s in states]
        worst = max(worst, max(vals) - min(vals))
    rep = ConditionReport(max_pg_residual=worst, samples=samples * len(states), label=label)
    rep.passed["state_independent"] = worst == 0.0
    return rep


# -- the transfer losses as functions of the two current actions ----------------

def sw_pair_loss(H: int, seed: int = 0) -> Callable[[float, float], float]:
    """Sliding-window loss with fixed random earlier actions; the current ones vary."""
    rng = np.random.default_rng(seed)
    hi = list(rng.uniform(0, 1, H - 1))
    hj = list(rng.uniform(0, 1, H - 1))
    return lambda a_i, a_j: sw_loss(hi + [a_i], hj + [a_j], H)


def sw_pair_loss_swapped(H: int, seed: int = 0) -> Callable[[float, float], float]:
    """The partner's view of :func:`sw_pair_loss`: own history and action first."""
    rng = np.random.default_rng(seed)
    hi = list(rng.uniform(0, 1, H - 1))
    hj = list(rng.uniform(0, 1, H - 1))
    return lambda a_j, a_i: sw_loss(hj + [a_j], hi + [a_i], H)


def mom_pair_loss(alpha_mom: float, h_prev: float = 0.3) -> Callable[[float, float], float]:
    """Momentum loss one step after a stored value ``h_prev``."""
    def loss(a_i, a_j):
        st = MomState()
        st.h_prev[("i", "j")] = h_prev
        return mom_loss(st, a_i, a_j, alpha_mom, t=1, pair=("i", "j"))
    return loss


def coordination_game(levels: int = 11) -> TinyGame:
    grid = np.linspace(0, 1, levels)
    u = lambda joint, state: -(joint[0] - joint[1]) ** 2
    return TinyGame(levels=[grid, grid], utilities=[u, u])


def transfer_game(alpha: float = 0.7, levels: int = 11) -> tuple[TinyGame, Callable]:
    """Separable two-player game plus a shared squared-difference penalty, and its potential."""
    grid = np.linspace(0, 1, levels)
    base = [lambda a: -(a - 0.2) ** 2, lambda a: -(a - 0.9) ** 2 + 0.5 * a]
    pen = lambda joint: alpha * (joint[0] - joint[1]) ** 2
    u0 = lambda joint, s: base[0](joint[0]) - pen(joint)
    u1 = lambda joint, s: base[1](joint[1]) - pen(joint)
    phi = lambda joint, s: base[0](joint[0]) + base[1](joint[1]) - pen(joint)
    return TinyGame(levels=[grid, grid], utilities=[u0, u1]), phi


def verify_suite(samples: int = 100, h: float = 1e-4, seed: int = 0,
                 starts: int = 20) -> list[ConditionReport]:
    """Standard battery: loss symmetry, exact potential, equilibria and convergence."""
    reports = []
    for H in (1, 5, 10):
        reports.append(check_cross_partials(sw_pair_loss(H, seed), samples, h, seed,
                                            label=f"sw_H{H}",
                                            loss_ji=sw_pair_loss_swapped(H, seed)))
    for a in (0.0, 0.5, 1.0):
        rep = check_cross_partials(mom_pair_loss(a), samples, h, seed, label=f"mom_alpha{a}")
        rep.passed["current_term"] = abs(rep.mixed_partial_mean - (-2.0 * (1.0 - a))) < 1e-4
        reports.append(rep)
    reports.append(check_state_independence(
        lambda ai, aj, s: sw_pair_loss(5, seed)(ai, aj), states=[0.0, 0.5, 1.0], label="sw_state"))
    reports.append(check_state_independence(
        lambda ai, aj, s: mom_pair_loss(0.5)(ai, aj), states=[0.0, 0.5, 1.0], label="mom_state"))

    game, phi = transfer_game()
    reports.append(check_exact_pg(game, phi, label="transfer_game"))

    coord = coordination_game()
    rep = ConditionReport(label="coordination_ne")
    ne = brute_force_ne(coord)
    rep.passed["diagonal_ne"] = sorted(ne) == sorted((v, v) for v in coord.levels[0])
    rng = np.random.default_rng(seed)
    phi_c = lambda joint, s: -(joint[0] - joint[1]) ** 2
    ok = True
    for _ in range(starts):
        start = tuple(int(k) for k in rng.integers(0, len(coord.levels[0]), size=2))
        cert = certify_convergence(coord, phi_c, max_rounds=50, start=start)
        ok &= bool(cert) and cert.monotone and cert.trajectory[-1] in ne
    rep.passed["convergence"] = ok
    rep.samples = starts
    reports.append(rep)
    return reports


def write_report_csv(path, reports: Sequence[ConditionReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "condition", "passed", "max_asymmetry", "max_pg_residual",
                    "mixed_partial_mean", "samples"])
        for r in reports:
            for cond, ok in r.passed.items():
                w.writerow([r.label, cond, int(ok), repr(r.max_asymmetry),
                            repr(r.max_pg_residual), repr(r.mixed_partial_mean), r.samples])


def format_reports(reports: Sequence[ConditionReport]) -> str:
    lines = []
    for r in reports:
        for cond, ok in r.passed.items():
            lines.append(f"{'PASS' if ok else 'FAIL'}  {r.label:16s} {cond:18s} "
                         f"asym={r.max_asymmetry:.3e} resid={r.max_pg_residual:.3e}")
    return "\n".join(lines)
