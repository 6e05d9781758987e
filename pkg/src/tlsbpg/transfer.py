"""Pairwise knowledge transfer between players.

Two auxiliary losses penalize disagreement between the actions of paired
players: a sliding window over the last ``H`` actions and an exponentially
averaged (momentum) variant.  How strongly a player is pulled toward its
partner is set by ``alpha_tf``, which stays at zero while the player is still
exploring and otherwise shrinks with the Jensen-Shannon divergence between the
two players' state-visit histograms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InvalidDistribution

VARIANTS = ("sw", "mom", "rbf")


@dataclass
class TransferPlan:
    pairs: list[tuple[str, str]]
    variant: str = "mom"
    beta_tf: float = 0.8
    horizon_H: int = 10
    alpha_mom: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown transfer variant {self.variant!r}")
        if not 0.0 <= self.beta_tf <= 1.0:
            raise ConfigurationError(f"beta_tf must lie in [0, 1], got {self.beta_tf}")
        if self.horizon_H < 1:
            raise ConfigurationError(f"horizon_H must be >= 1, got {self.horizon_H}")
        if not 0.0 <= self.alpha_mom <= 1.0:
            raise ConfigurationError(f"alpha_mom must lie in [0, 1], got {self.alpha_mom}")
        seen = set()
        pairs = []
        for i, j in self.pairs:
            if i == j:
                raise ConfigurationError(f"player {i!r} cannot be paired with itself")
            key = frozenset((i, j))
            if key in seen:
                raise ConfigurationError(f"pair ({i!r}, {j!r}) listed twice")
            seen.add(key)
            pairs.append((i, j))
        self.pairs = pairs

    def partners(self, player: str) -> list[str]:
        out = []
        for i, j in self.pairs:
            if i == player:
                out.append(j)
            elif j == player:
                out.append(i)
        return out

    def players(self) -> list[str]:
        out = []
        for pair in self.pairs:
            for p in pair:
                if p not in out:
                    out.append(p)
        return out


@dataclass
class MomState:
    """Previous momentum loss per ordered player pair."""

    h_prev: dict = field(default_factory=dict)

    def initialized(self, i, j) -> bool:
        return (i, j) in self.h_prev


def _padded_window(history: Sequence[float], H: int) -> np.ndarray:
    h = np.asarray(list(history), dtype=float)
    if h.size == 0:
        raise ConfigurationError("action history is empty")
    if h.size >= H:
        return h[-H:]
    return np.concatenate([np.full(H - h.size, h[0]), h])


def sw_loss(history_i: Sequence[float], history_j: Sequence[float], H: int) -> float:
    """Sum of squared action differences over the last ``H`` entries (oldest entry repeats while short)."""
    if H < 1:
        raise ConfigurationError(f"horizon H must be >= 1, got {H}")
    wi = _padded_window(history_i, H)
    wj = _padded_window(history_j, H)
    return float(np.sum((wi - wj) ** 2))


def mom_loss(state: MomState, a_i: float, a_j: float, alpha_mom: float, t: int,
             pair=("i", "j")) -> float:
    """Momentum-averaged squared action difference; ``t == 0`` starts from the raw square.

    ``pair`` keys the stored previous value so one ``MomState`` can serve many pairs.
    """
    if not 0.0 <= alpha_mom <= 1.0:
        raise ConfigurationError(f"alpha_mom must lie in [0, 1], got {alpha_mom}")
    if t < 0:
        raise ConfigurationError("t must be >= 0")
    sq = (a_i - a_j) ** 2
    if t == 0 or pair not in state.h_prev:
        h = sq
    else:
        h = alpha_mom * state.h_prev[pair] + (1.0 - alpha_mom) * sq
    state.h_prev[pair] = h
    return h


def _check_distribution(p, name) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidDistribution(f"{name} must be a non-empty vector")
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise InvalidDistribution(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > 1e-9:
        raise InvalidDistribution(f"{name} sums to {p.sum()!r}, not 1")
    return p


def _kl2(p: np.ndarray, m: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log2(p[mask] / m[mask])))


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in bits; symmetric and bounded by 1."""
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise InvalidDistribution(f"length mismatch: {p.size} vs {q.size}")
    # canonical order so jsd(p, q) and jsd(q, p) run the identical float expression
    if tuple(q) < tuple(p):
        p, q = q, p
    m = 0.5 * (p + q)
    d = 0.5 * _kl2(p, m) + 0.5 * _kl2(q, m)
    return min(max(d, 0.0), 1.0)


class VisitDistribution:
    """Per-dimension visit counters with a Laplace-smoothed normalized view."""

    def __init__(self, dim: int, bins_per_dim: int = 40):
        self.dim = dim
        self.bins_per_dim = bins_per_dim
        self.counts = np.zeros((dim, bins_per_dim), dtype=np.int64)

    @property
    def n_visits(self) -> int:
        return int(self.counts[0].sum()) if self.dim else 0

    def probabilities(self) -> np.ndarray:
        smoothed = self.counts + 1.0
        return smoothed / smoothed.sum(axis=1, keepdims=True)

    def copy(self) -> "VisitDistribution":
        other = VisitDistribution(self.dim, self.bins_per_dim)
        other.counts = self.counts.copy()
        return other


def record_visit(dist: VisitDistribution, index) -> None:
    index = tuple(index)
    if len(index) != dist.dim:
        raise ConfigurationError(f"index has {len(index)} entries, histogram has {dist.dim}")
    for m, k in enumerate(index):
        if not 0 <= k < dist.bins_per_dim:
            raise ConfigurationError(f"bin {k} outside [0, {dist.bins_per_dim})")
        dist.counts[m, k] += 1


def visit_divergence(visit_i: VisitDistribution, visit_j: VisitDistribution) -> float:
    """Sum over state dimensions of the per-dimension JSD.

    Players with different state dimensions are compared over the shared
    leading dimensions only.
    """
    pi = visit_i.probabilities()
    pj = visit_j.probabilities()
    if pi.shape[1] != pj.shape[1]:
        raise InvalidDistribution("visit histograms use different bin counts")
    return sum(jsd(pi[m], pj[m]) for m in range(min(len(pi), len(pj))))


def alpha_from_divergence(epsilon: float, beta_tf: float, divergence: float) -> float:
    if epsilon >= beta_tf or divergence >= 1.0:
        return 0.0
    return 1.0 - divergence


def alpha_tf(epsilon: float, beta_tf: float, visit_i: VisitDistribution,
             visit_j: VisitDistribution) -> float:
    """Transfer weight: zero while ``epsilon >= beta_tf`` or the divergence reaches 1, else ``1 - D``."""
    return alpha_from_divergence(epsilon, beta_tf, visit_divergence(visit_i, visit_j))


def modified_utility(u_base: float, alpha: float, h_loss: float) -> float:
    return u_base - alpha * h_loss
