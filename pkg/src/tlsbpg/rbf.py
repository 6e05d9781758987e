"""Fixed-center RBF latents of performance maps and latent-space similarity."""

from __future__ import annotations

import csv
import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, EmptyFit

RIDGE = 1e-6


@dataclass(frozen=True)
class RbfConfig:
    centers: np.ndarray
    sigma: float
    update_interval_H: int = 10

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", c)
        if c.shape[0] < 1:
            raise ConfigurationError("need at least one RBF center")
        if np.any(c < 0) or np.any(c > 1):
            raise ConfigurationError("RBF centers must lie in [0, 1]^d")
        if not self.sigma > 0:
            raise ConfigurationError(f"sigma must be > 0, got {self.sigma}")
        if self.update_interval_H < 1:
            raise ConfigurationError("update_interval_H must be >= 1")

    @property
    def J(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @classmethod
    def grid(cls, dim: int, side: int = 3, sigma: float | None = None,
             update_interval_H: int = 10) -> "RbfConfig":
        """Centers at ``(k + 0.5) / side`` per axis; ``sigma`` defaults to ``0.5 / side``."""
        if side < 1 or dim < 1:
            raise ConfigurationError("grid side and dimension must be >= 1")
        axis = (np.arange(side) + 0.5) / side
        centers = np.array(list(itertools.product(axis, repeat=dim)))
        return cls(centers, 0.5 / side if sigma is None else sigma, update_interval_H)

    @classmethod
    def with_latent_size(cls, dim: int, J: int = 9, update_interval_H: int = 10) -> "RbfConfig":
        """Regular grid with exactly ``J`` centers in ``dim`` dimensions (9 -> 3x3 in 2-D, 9 points in 1-D)."""
        side = int(round(J ** (1.0 / dim)))
        if side**dim != J:
            raise ConfigurationError(f"cannot lay {J} centers on a regular {dim}-D grid")
        return cls.grid(dim, side, update_interval_H=update_interval_H)


@dataclass
class RbfLatent:
    theta_action: np.ndarray
    theta_utility: np.ndarray
    fitted_at_step: int = 0

    def __post_init__(self):
        self.theta_action = np.asarray(self.theta_action, dtype=float)
        self.theta_utility = np.asarray(self.theta_utility, dtype=float)
        if self.theta_action.shape != self.theta_utility.shape:
            raise ConfigurationError("both latent heads need the same length")

    @property
    def J(self) -> int:
        return self.theta_action.size

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.theta_action, self.theta_utility])


def basis(config: RbfConfig, states) -> np.ndarray:
    """Normalized Gaussian activations, shape ``(n, J)``; rows sum to one."""
    s = np.atleast_2d(np.asarray(states, dtype=float))
    if s.shape[1] != config.dim:
        raise ConfigurationError(f"state dimension {s.shape[1]} != RBF dimension {config.dim}")
    d2 = np.sum((s[:, None, :] - config.centers[None, :, :]) ** 2, axis=2)
    logits = -d2 / (2.0 * config.sigma**2)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def rbf_eval(latent: RbfLatent, config: RbfConfig, state) -> tuple[float, float]:
    phi = basis(config, state)[0]
    return float(phi @ latent.theta_action), float(phi @ latent.theta_utility)


def ls_objective(theta, phi, y, lam=RIDGE) -> float:
    r = phi @ theta - y
    return float(np.sum(r**2) + lam * np.sum(theta**2))


def ls_gradient(theta, phi, y, lam=RIDGE) -> np.ndarray:
    return 2.0 * phi.T @ (phi @ theta - y) + 2.0 * lam * theta


def fit_latent(samples, config: RbfConfig, step: int = 0, lam: float = RIDGE) -> RbfLatent:
    """Ridge least-squares fit of both heads from ``(state, action, utility)`` samples."""
    samples = list(samples)
    if not samples:
        raise EmptyFit("no samples to fit")
    states = np.array([np.atleast_1d(s) for s, _, _ in samples], dtype=float)
    y = np.array([[a, u] for _, a, u in samples], dtype=float)
    return fit_latent_arrays(states, y[:, 0], y[:, 1], config, step, lam)


def fit_latent_arrays(states, actions, utilities, config: RbfConfig, step: int = 0,
                      lam: float = RIDGE) -> RbfLatent:
    """:func:`fit_latent` on column arrays: states ``(n, d)``, actions and utilities ``(n,)``."""
    states = np.asarray(states, dtype=float)
    if states.shape[0] == 0:
        raise EmptyFit("no samples to fit")
    phi = basis(config, states)
    gram = phi.T @ phi + lam * np.eye(config.J)
    theta = np.linalg.solve(gram, phi.T @ np.column_stack([actions, utilities]))
    return RbfLatent(theta[:, 0], theta[:, 1], fitted_at_step=step)


def map_samples(pmap, utility_override=None):
    """Centers, best actions and best utilities of the filled cells, in row-major order.

    ``utility_override`` is an array shaped like the map; finite entries replace
    the stored utility.
    """
    filled = np.isfinite(pmap.best_utility)
    idx = np.nonzero(filled)
    centers = (np.column_stack(idx) + 0.5) / pmap.bins_per_dim
    utilities = pmap.best_utility[idx]
    if utility_override is not None:
        over = utility_override[idx]
        utilities = np.where(np.isnan(over), utilities, over)
    return centers, pmap.best_action[idx], utilities


def latent_from_map(pmap, config: RbfConfig, step: int = 0, utility_override=None) -> RbfLatent:
    return fit_latent_arrays(*map_samples(pmap, utility_override), config, step=step)


def similarity(latent_n: RbfLatent, latent_m: RbfLatent) -> float:
    """Squared distance between two latents, summed over both heads."""
    if latent_n.J != latent_m.J:
        raise ConfigurationError(f"latent sizes differ: {latent_n.J} vs {latent_m.J}")
    return float(np.sum((latent_n.stacked() - latent_m.stacked()) ** 2))


def similarity_matrix(latents) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Pairwise similarity matrix plus index pairs ranked from most to least similar."""
    n = len(latents)
    if n < 2:
        raise ConfigurationError("need at least two players for a similarity matrix")
    mat = np.zeros((n, n))
    for a, b in itertools.combinations(range(n), 2):
        mat[a, b] = mat[b, a] = similarity(latents[a], latents[b])
    ranked = sorted(itertools.combinations(range(n), 2), key=lambda ab: (mat[ab], ab))
    return mat, ranked


def write_similarity_csv(path, names, matrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["player", *names])
        for name, row in zip(names, matrix):
            w.writerow([name, *(f"{v:.10g}" for v in row)])


class LatentHistory:
    """Most recent latent snapshots of one player, oldest first."""

    def __init__(self, depth: int = 10):
        self.snapshots: deque[RbfLatent] = deque(maxlen=depth)

    def append(self, latent: RbfLatent) -> None:
        if self.snapshots and latent.fitted_at_step < self.snapshots[-1].fitted_at_step:
            raise ConfigurationError("latent snapshots must arrive in step order")
        self.snapshots.append(latent)

    def __len__(self):
        return len(self.snapshots)

    def window(self, H: int) -> list[RbfLatent]:
        if not self.snapshots:
            raise ConfigurationError("latent history is empty")
        snaps = list(self.snapshots)[-H:]
        return [snaps[0]] * (H - len(snaps)) + snaps


def latent_sw_loss(history_i: LatentHistory, history_n: LatentHistory, H: int) -> float:
    """Latent counterpart of the sliding-window loss over the last ``H`` snapshots."""
    if H < 1:
        raise ConfigurationError(f"horizon H must be >= 1, got {H}")
    return float(sum(similarity(a, b) for a, b in zip(history_i.window(H), history_n.window(H))))


def utility_with_latent(u_base: float, alphas, losses, N: int) -> float:
    if N < 2:
        raise ConfigurationError(f"N must be >= 2, got {N}")
    if len(alphas) != len(losses):
        raise ConfigurationError("alphas and losses must have equal length")
    penalty = sum(a * l for a, l in zip(alphas, losses) if a != 0.0)
    return u_base - penalty / (N - 1)
