"""Exact Bayesian reference estimator for one agent's readings.

The posterior density of the target given the readings is a mixture over
fault patterns: each pattern contributes the marginal cell probabilities of
its assumed-faulty readings times the truthful indicator factors of the rest,
flat over the truthful intersection.  The density is therefore piecewise
constant between reading endpoints and admits exact integration.  No term
cancellation is applied; every pattern's marginal factors stay in the sum.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scenario import Interval, ScenarioParams

__all__ = [
    "OffLatticeError",
    "InconsistentReadingsError",
    "PiecewiseDensity",
    "implied_precision",
    "posterior_density",
    "posterior_mean_exact",
]


class OffLatticeError(ValueError):
    """A reading's width does not correspond to any integer precision."""


class InconsistentReadingsError(ValueError):
    """The readings leave zero posterior mass (no pattern explains them)."""


@dataclass(frozen=True)
class PiecewiseDensity:
    """Unnormalized piecewise-constant density.

    levels[k] is the density on (breakpoints[k], breakpoints[k+1]).
    """

    breakpoints: np.ndarray
    levels: np.ndarray

    def mass(self) -> float:
        gaps = np.diff(self.breakpoints)
        return float(np.dot(self.levels, gaps))

    def mean(self) -> float:
        left = self.breakpoints[:-1]
        right = self.breakpoints[1:]
        total = self.mass()
        if total <= 0.0:
            raise InconsistentReadingsError("density carries no mass")
        first_moment = float(np.dot(self.levels, (right + left) * (right - left) / 2.0))
        return first_moment / total

    def normalized(self) -> "PiecewiseDensity":
        total = self.mass()
        if total <= 0.0:
            raise InconsistentReadingsError("density carries no mass")
        return PiecewiseDensity(self.breakpoints, self.levels / total)


def implied_precision(reading: Interval, x_max: int) -> int:
    """Recover the integer cell count from a reading's width.

    width = 2*x_max/precision for some precision in 1..x_max; anything else
    is off the reading lattice.
    """
    width = reading.width
    if width <= 0:
        raise OffLatticeError(f"reading width must be positive, got {width}")
    precision = int(round(2.0 * x_max / width))
    if precision < 1 or precision > x_max:
        raise OffLatticeError(f"width {width} implies precision {precision} outside 1..{x_max}")
    if abs(width - 2.0 * x_max / precision) > 1e-9 * (1.0 + width):
        raise OffLatticeError(f"width {width} is not 2*{x_max}/k for any integer k in 1..{x_max}")
    return precision


def posterior_density(readings: Sequence[Interval], params: ScenarioParams) -> PiecewiseDensity:
    """Unnormalized posterior density of the target given one agent's readings.

    Sums over every size-tau fault pattern.  A pattern's contribution is
    constant on the intersection of the assumed-truthful readings (clipped to
    [-x_max, x_max]) and zero elsewhere; its level is the product of the
    assumed-faulty readings' marginal cell probabilities 1/(x_max*precision)
    with the truthful factors (1/x_max) and the flat prior 1/(2*x_max).
    """
    n = len(readings)
    tau, x_max = params.tau, params.x_max
    if n != params.n:
        raise ValueError(f"expected {params.n} readings, got {n}")
    precisions = [implied_precision(iv, x_max) for iv in readings]

    lo = np.array([iv.lo for iv in readings], dtype=float)
    hi = np.array([iv.hi for iv in readings], dtype=float)
    points = np.unique(np.concatenate([lo, hi, [-float(x_max), float(x_max)]]))
    points = points[(points >= -x_max) & (points <= x_max)]
    levels = np.zeros(points.size - 1, dtype=float)

    prior = 1.0 / (2.0 * x_max)
    truthful_factor = (1.0 / x_max) ** (n - tau)
    for truthful in itertools.combinations(range(n), n - tau):
        truthful_set = set(truthful)
        a = max(-float(x_max), max(lo[i] for i in truthful))
        b = min(float(x_max), min(hi[i] for i in truthful))
        if b <= a:
            continue
        coeff = prior * truthful_factor
        for i in range(n):
            if i not in truthful_set:
                coeff /= x_max * precisions[i]
        start = int(np.searchsorted(points, a))
        stop = int(np.searchsorted(points, b))
        levels[start:stop] += coeff
    return PiecewiseDensity(breakpoints=points, levels=levels)


def posterior_mean_exact(readings: Sequence[Interval], params: ScenarioParams) -> float:
    """Exact conditional expectation of the target given one agent's readings."""
    return posterior_density(readings, params).mean()
