"""Local utilities of the production-line game and the global potential.

``V_D`` enters the utilities as a signed demand balance: zero when the demand
is met and negative by the unmet volume otherwise, so ``1 / (1 - alpha_D * V_D)``
stays in ``(0, 1]``.  :func:`demand_term` reports the unmet volume itself
(non-negative); callers negate it before building utilities.
"""

from __future__ import annotations

import numpy as np

from .topology import UtilityWeights

DEN_FLOOR = 1e-6


def demand_term(fill_final_normalized, outflow, inflow, dt) -> float:
    """Unmet demand volume over an interval.

    Each argument may be a scalar (held for ``dt`` seconds) or a per-step
    sequence (each entry lasting ``dt``).  Only steps with an empty final
    buffer accrue ``outflow - inflow``; the result is clamped at zero.
    """
    h, out, inn = np.broadcast_arrays(
        np.atleast_1d(np.asarray(fill_final_normalized, dtype=float)),
        np.atleast_1d(np.asarray(outflow, dtype=float)),
        np.atleast_1d(np.asarray(inflow, dtype=float)),
    )
    rate = np.where(h <= 0.0, out - inn, 0.0)
    return max(float(np.sum(rate) * dt), 0.0)


def constraint_terms(fill_prior, fill_next, limits: UtilityWeights, T_I: float = 1.0,
                     dt: float = 1.0) -> tuple[float, float]:
    """Time spent below the lower limit (first level) and above the upper limit (second level).

    Scalars are treated as constant over ``T_I``; sequences are per-step samples of length ``dt``.
    """
    def integrate(levels, mask_fn):
        arr = np.asarray(levels, dtype=float)
        if arr.ndim == 0:
            return float(mask_fn(arr)) * T_I
        return float(np.count_nonzero(mask_fn(arr))) * dt

    L_p = integrate(fill_prior, lambda h: h < limits.H_p)
    L_s = integrate(fill_next, lambda h: h > limits.H_s)
    return L_p, L_s


def demand_factor(alpha_D: float, V_D: float) -> tuple[float, bool]:
    """``1 / (1 - alpha_D * V_D)`` with the denominator floored; second item flags the clamp."""
    den = 1.0 - alpha_D * V_D
    if den < DEN_FLOOR:
        return 1.0 / DEN_FLOOR, True
    return 1.0 / den, False


def utility_bgs(is_last: bool, L_p: float, L_s: float, P: float, V_D: float,
                weights: UtilityWeights) -> float:
    lower = 1.0 / (1.0 + weights.alpha_L * L_p)
    power = 1.0 / (1.0 + weights.alpha_P * P)
    if is_last:
        return lower + power + demand_factor(weights.alpha_D, V_D)[0]
    return lower + 1.0 / (1.0 + weights.alpha_L * L_s) + power


def utility_lsbgs(is_last: bool, L_p: float, L_s: float, P: float, V_D: float,
                  weights: UtilityWeights) -> float:
    """Like :func:`utility_bgs`, but non-last players also carry the demand term."""
    u = utility_bgs(is_last, L_p, L_s, P, V_D, weights)
    if not is_last:
        u += demand_factor(weights.alpha_D, V_D)[0]
    return u


def potential(utilities) -> float:
    return float(sum(utilities))
