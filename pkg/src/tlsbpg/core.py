"""Best-response learners over discretized performance maps.

Each player keeps a dense grid over its (normalized) local state space.  A
cell remembers the best action seen in that region together with the utility
it earned.  Actions for arbitrary states come from inverse-squared-distance
interpolation over all populated cell centers.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidUtility, NoKnowledge, PolicyLoadError
from .transfer import VisitDistribution

IDW_DELTA = 1e-9
MAP_MAGIC = "tlsbpg-performance-map"


def _as_state(state) -> np.ndarray:
    s = np.atleast_1d(np.asarray(state, dtype=float))
    if s.ndim != 1:
        raise ConfigurationError(f"state must be one-dimensional, got shape {s.shape}")
    # min/max are NaN-propagating, so one comparison each also rejects NaN
    if not (s.min() >= 0.0 and s.max() <= 1.0):
        raise ConfigurationError(f"state components must lie in [0, 1], got {s.tolist()}")
    return s


def discretize(state, bins_per_dim: int) -> tuple[int, ...]:
    """Map a normalized state to per-dimension bin indices (``floor(v*B)``, top edge clamped)."""
    if bins_per_dim < 2:
        raise ConfigurationError(f"bins_per_dim must be >= 2, got {bins_per_dim}")
    s = _as_state(state)
    return tuple(min(int(math.floor(v * bins_per_dim)), bins_per_dim - 1) for v in s)


def cell_center(index, bins_per_dim: int) -> np.ndarray:
    return (np.asarray(index, dtype=float) + 0.5) / bins_per_dim


class PerformanceMap:
    """Grid of (best action, best utility) pairs over ``[0, 1]^dim``.

    Empty cells hold ``nan`` as action and ``-inf`` as utility.  Populated cells
    are mirrored in a compact point list so interpolation only touches the
    support points that exist.
    """

    def __init__(self, dim: int, bins_per_dim: int = 40):
        if dim < 1:
            raise ConfigurationError(f"map dimension must be >= 1, got {dim}")
        if bins_per_dim < 2:
            raise ConfigurationError(f"bins_per_dim must be >= 2, got {bins_per_dim}")
        self.dim = int(dim)
        self.bins_per_dim = int(bins_per_dim)
        shape = (self.bins_per_dim,) * self.dim
        self.best_action = np.full(shape, np.nan)
        self.best_utility = np.full(shape, -np.inf)
        self._rows: dict[int, int] = {}
        self._points = np.empty((0, self.dim))
        self._values = np.empty(0)

    @property
    def shape(self):
        return self.best_action.shape

    @property
    def n_filled(self) -> int:
        return len(self._rows)

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Centers and best actions of all populated cells (views, do not mutate)."""
        return self._points, self._values

    def cell(self, index) -> tuple[float, float]:
        idx = tuple(index)
        return float(self.best_action[idx]), float(self.best_utility[idx])

    def index_of(self, state) -> tuple[int, ...]:
        s = _as_state(state)
        if s.shape[0] != self.dim:
            raise ConfigurationError(
                f"state has dimension {s.shape[0]} but the map expects {self.dim}"
            )
        return discretize(s, self.bins_per_dim)

    def _store(self, index: tuple[int, ...], action: float, utility: float) -> None:
        self.best_action[index] = action
        self.best_utility[index] = utility
        flat = int(np.ravel_multi_index(index, self.shape))
        row = self._rows.get(flat)
        if row is None:
            self._rows[flat] = len(self._values)
            self._points = np.vstack([self._points, cell_center(index, self.bins_per_dim)])
            self._values = np.append(self._values, action)
        else:
            self._values[row] = action

    def copy(self) -> "PerformanceMap":
        other = PerformanceMap(self.dim, self.bins_per_dim)
        for flat in self._rows:
            idx = np.unravel_index(flat, self.shape)
            other._store(tuple(int(i) for i in idx), self.best_action[idx], self.best_utility[idx])
        return other

    def filled_cells(self):
        """Yield ``(center, best_action, best_utility)`` for every populated cell."""
        for flat in sorted(self._rows):
            idx = np.unravel_index(flat, self.shape)
            yield cell_center(idx, self.bins_per_dim), float(self.best_action[idx]), float(
                self.best_utility[idx]
            )

    # -- serialization -------------------------------------------------------------
    def save(self, path) -> None:
        """Write a text table: header line, then one ``action utility`` row per cell (row-major)."""
        table = np.column_stack([self.best_action.ravel(), self.best_utility.ravel()])
        header = f"{MAP_MAGIC} dim={self.dim} bins={self.bins_per_dim}"
        np.savetxt(path, table, fmt="%.17g", header=header)

    @classmethod
    def load(cls, path) -> "PerformanceMap":
        path = Path(path)
        try:
            with path.open() as fh:
                header = fh.readline().lstrip("#").split()
                if not header or header[0] != MAP_MAGIC:
                    raise PolicyLoadError(f"{path}: not a performance map file")
                meta = dict(item.split("=", 1) for item in header[1:])
                dim, bins = int(meta["dim"]), int(meta["bins"])
                table = np.loadtxt(fh, ndmin=2)
        except PolicyLoadError:
            raise
        except (OSError, ValueError, KeyError) as exc:
            raise PolicyLoadError(f"{path}: {exc}") from exc
        if table.shape != (bins**dim, 2):
            raise PolicyLoadError(
                f"{path}: expected {bins**dim} rows of 2 columns, got {table.shape}"
            )
        pmap = cls(dim, bins)
        actions = table[:, 0].reshape(pmap.shape)
        utils = table[:, 1].reshape(pmap.shape)
        filled = np.isfinite(utils)
        if np.any(np.isnan(utils)) or np.any(np.isposinf(utils)):
            raise PolicyLoadError(f"{path}: utilities must be finite or -inf")
        if np.any(~np.isfinite(actions[filled])) or np.any(
            (actions[filled] < 0) | (actions[filled] > 1)
        ):
            raise PolicyLoadError(f"{path}: populated cells need actions in [0, 1]")
        for idx in zip(*np.nonzero(filled)):
            pmap._store(tuple(int(i) for i in idx), actions[idx], utils[idx])
        return pmap


def interpolate_action(pmap: PerformanceMap, state) -> float:
    """Inverse-squared-distance average of the stored best actions.

    Weights are ``1 / (|s - c_k|^2 + 1e-9)`` over every populated center ``c_k``;
    a state sitting exactly on a center returns that cell's action.
    """
    points, values = pmap.support()
    if values.size == 0:
        raise NoKnowledge("performance map has no populated cells")
    s = _as_state(state)
    if s.shape[0] != pmap.dim:
        raise ConfigurationError(f"state has dimension {s.shape[0]} but the map expects {pmap.dim}")
    d2 = np.sum((points - s) ** 2, axis=1)
    hits = np.flatnonzero(d2 == 0.0)
    if hits.size:
        return float(values[hits[0]])
    w = 1.0 / (d2 + IDW_DELTA)
    return float(np.clip(np.dot(w, values) / np.sum(w), 0.0, 1.0))


def update_map(pmap: PerformanceMap, state, action: float, utility: float) -> bool:
    """Keep ``(action, utility)`` if it strictly beats the cell incumbent."""
    if math.isnan(utility):
        raise InvalidUtility("utility is NaN")
    if not 0.0 <= action <= 1.0:
        raise ConfigurationError(f"action must lie in [0, 1], got {action}")
    idx = pmap.index_of(state)
    if utility > pmap.best_utility[idx]:
        pmap._store(idx, float(action), float(utility))
        return True
    return False


@dataclass(frozen=True)
class DecaySchedule:
    """Exponential exploration decay ``eps0 * gamma**t`` floored at ``eps_min``."""

    eps0: float = 1.0
    gamma: float = 0.999
    eps_min: float = 0.02

    @classmethod
    def reaching_floor(cls, total_steps: int, fraction: float = 0.8, eps0: float = 1.0,
                       eps_min: float = 0.02) -> "DecaySchedule":
        """Schedule whose value hits ``eps_min`` after ``fraction * total_steps`` steps."""
        if total_steps < 1:
            raise ConfigurationError("total_steps must be >= 1")
        if not 0.0 < eps_min <= eps0 <= 1.0:
            raise ConfigurationError("need 0 < eps_min <= eps0 <= 1")
        horizon = max(fraction * total_steps, 1.0)
        gamma = (eps_min / eps0) ** (1.0 / horizon) if eps_min < eps0 else 1.0
        return cls(eps0=eps0, gamma=gamma, eps_min=eps_min)

    def value(self, step: int) -> float:
        if step < 0:
            raise ConfigurationError("step must be >= 0")
        return max(self.eps0 * self.gamma**step, self.eps_min)


@dataclass
class PlayerAgent:
    """One actuator's learner: map, exploration rate, recent actions and state-visit counts."""

    id: str
    dim: int
    bins_per_dim: int = 40
    epsilon: float = 1.0
    history_len: int = 64
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    map: PerformanceMap = None
    action_history: deque = None
    visits: VisitDistribution = None

    def __post_init__(self):
        if self.map is None:
            self.map = PerformanceMap(self.dim, self.bins_per_dim)
        elif (self.map.dim, self.map.bins_per_dim) != (self.dim, self.bins_per_dim):
            raise ConfigurationError(f"map shape does not match player {self.id}")
        if self.action_history is None:
            self.action_history = deque(maxlen=self.history_len)
        if self.visits is None:
            self.visits = VisitDistribution(self.dim, self.bins_per_dim)

    def record_action(self, action: float) -> None:
        self.action_history.append(float(action))


def select_action(agent: PlayerAgent, state) -> tuple[float, bool]:
    """Epsilon-greedy choice between a uniform random action and the interpolated one."""
    if agent.rng.random() < agent.epsilon:
        return float(agent.rng.random()), True
    try:
        return interpolate_action(agent.map, state), False
    except NoKnowledge:
        return float(agent.rng.random()), True


def decay_epsilon(agent: PlayerAgent, step: int, schedule: DecaySchedule) -> float:
    agent.epsilon = schedule.value(step)
    return agent.epsilon
