"""Local differential privacy for gradient vectors.

Every entry is released independently, so ``epsilon`` is a per-scalar
budget.  Both mechanisms are unbiased on inputs inside ``[-C, C]``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

MECHANISMS = ("laplace", "duchi")


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    clip: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be > 0")
        if not self.clip > 0:
            raise ParameterError("clip bound must be > 0")


def clip(v, C):
    if not C > 0:
        raise ParameterError("clip bound must be > 0")
    return np.clip(np.asarray(v, dtype=float), -C, C)


def _check_bounded(v, C):
    if np.any(np.abs(v) > C * (1 + 1e-12)):
        raise ParameterError(f"inputs must be clipped to [-{C}, {C}] first")


def laplace_scale(budget):
    # one bounded scalar has sensitivity 2C
    return 2.0 * budget.clip / budget.epsilon


def laplace_variance(budget):
    return 2.0 * laplace_scale(budget) ** 2


def laplace_perturb(v, budget, rng=None):
    v = np.asarray(v, dtype=float)
    _check_bounded(v, budget.clip)
    rng = np.random.default_rng(rng)
    return v + rng.laplace(0.0, laplace_scale(budget), size=v.shape)


def duchi_magnitude(budget):
    """``C (e^eps + 1) / (e^eps - 1)``, written to stay finite for huge eps."""
    return budget.clip / math.tanh(budget.epsilon / 2.0)


def duchi_plus_probability(t, epsilon):
    """``P[output = +B]`` for scaled input ``t`` in [-1, 1]."""
    return 0.5 + 0.5 * math.tanh(epsilon / 2.0) * np.asarray(t, dtype=float)


def duchi_output_distribution(t, budget):
    """``{+B: p, -B: 1 - p}`` for a scaled input ``t``."""
    B = duchi_magnitude(budget)
    p = float(duchi_plus_probability(t, budget.epsilon))
    return {B: p, -B: 1.0 - p}


def duchi_variance(v, budget):
    return duchi_magnitude(budget) ** 2 - np.asarray(v, dtype=float) ** 2


def duchi_perturb(v, budget, rng=None):
    v = np.asarray(v, dtype=float)
    t = v / budget.clip
    if np.any(np.abs(t) > 1 + 1e-12):
        raise ParameterError("Duchi input must satisfy |v| <= C")
    rng = np.random.default_rng(rng)
    plus = rng.random(v.shape) < duchi_plus_probability(np.clip(t, -1, 1), budget.epsilon)
    B = duchi_magnitude(budget)
    return np.where(plus, B, -B)


def perturb(v, budget, mechanism="laplace", rng=None):
    """Clip ``v`` to ``[-C, C]`` and release it through ``mechanism``."""
    v = clip(v, budget.clip)
    if mechanism == "laplace":
        return laplace_perturb(v, budget, rng)
    if mechanism == "duchi":
        return duchi_perturb(v, budget, rng)
    raise ParameterError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")


def noise_variance(v, budget, mechanism):
    """Per-entry variance of the released values."""
    v = clip(v, budget.clip)
    if mechanism == "laplace":
        return np.full(v.shape, laplace_variance(budget))
    if mechanism == "duchi":
        return duchi_variance(v, budget)
    raise ParameterError(f"unknown mechanism {mechanism!r}")


def first_order_score_variance(GL, GR, var_left, var_right, lam=1.0):
    """Variance of ``-(1/lam) X_L X_R`` for independent noisy sums.

    ``var_left`` / ``var_right`` are the summed per-entry noise variances of
    each side.  The leading terms are returned; the exact variance adds
    ``var_left * var_right / lam**2``.
    """
    return (GL ** 2 * var_right + GR ** 2 * var_left) / lam ** 2
