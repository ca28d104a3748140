"""Interval fusers: Marzullo, Brooks-Iyengar, generalized Brooks-Iyengar, linear.

Every fuser maps the n intervals one agent received to a point estimate of
the target.  All of them tolerate up to tau faulty inputs in the sense of the
fault model in `scenario`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .scenario import Interval

__all__ = [
    "DegenerateInputError",
    "TransitionProfile",
    "GbiWeights",
    "LinearCoefficients",
    "fuse_marzullo",
    "transition_profile",
    "fuse_bi",
    "fuse_bi_with_flag",
    "gbi_bayes_weights",
    "fuse_gbi",
    "fuse_gbi_oneopt",
    "fuse_linear",
]


class DegenerateInputError(ValueError):
    """Raised when a fuser's weighting collapses (e.g. every GBI weight is zero)."""


def _bounds(readings: Sequence[Interval] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize readings to (lo, hi) float arrays. Accepts Intervals or an (n, 2) array."""
    if isinstance(readings, np.ndarray):
        arr = np.asarray(readings, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"expected readings of shape (n, 2), got {arr.shape}")
        lo, hi = arr[:, 0], arr[:, 1]
    else:
        lo = np.array([iv.lo for iv in readings], dtype=float)
        hi = np.array([iv.hi for iv in readings], dtype=float)
    if lo.size == 0:
        raise ValueError("need at least one reading")
    if np.any(lo > hi):
        raise ValueError("interval with lower endpoint above upper endpoint")
    return lo, hi


def fuse_marzullo(readings: Sequence[Interval] | np.ndarray, tau: int) -> float:
    """Midpoint of the (tau+1)-th smallest lower endpoint and the
    (n-tau-1)-th smallest upper endpoint.

    Requires n >= tau + 2 so both order statistics exist.
    """
    lo, hi = _bounds(readings)
    n = lo.size
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if n < tau + 2:
        raise ValueError(f"need n >= tau + 2 for order statistics, got n={n}, tau={tau}")
    lo_sorted = np.sort(lo)
    hi_sorted = np.sort(hi)
    return float((lo_sorted[tau] + hi_sorted[n - tau - 2]) / 2.0)


@dataclass(frozen=True)
class TransitionProfile:
    """Coverage structure of an interval family.

    points holds the sorted distinct endpoints; counts[k] is the number of
    intervals covering the whole open region (points[k], points[k+1]).
    Coverage is evaluated on open regions only, so a zero-width interval or
    two intervals touching at a single point never contribute a count.
    """

    points: np.ndarray
    counts: np.ndarray

    @property
    def region_midpoints(self) -> np.ndarray:
        return (self.points[:-1] + self.points[1:]) / 2.0


def transition_profile(readings: Sequence[Interval] | np.ndarray) -> TransitionProfile:
    """Distinct endpoints and per-open-region coverage counts."""
    lo, hi = _bounds(readings)
    points = np.unique(np.concatenate([lo, hi]))
    if points.size < 2:
        return TransitionProfile(points=points, counts=np.zeros(0, dtype=np.int64))
    left = points[:-1]
    right = points[1:]
    counts = ((lo[:, None] <= left) & (hi[:, None] >= right)).sum(axis=0)
    return TransitionProfile(points=points, counts=counts)


def fuse_bi_with_flag(readings: Sequence[Interval] | np.ndarray, tau: int) -> tuple[float, bool]:
    """Brooks-Iyengar estimate plus a flag marking degenerate inputs.

    Regions covered by at least n - tau intervals are averaged by their
    midpoints, weighted by coverage count.  If no region reaches the
    threshold (impossible under the in-model guarantee, possible for
    arbitrary inputs) the maximal-coverage regions are used instead and the
    flag is set.
    """
    lo, hi = _bounds(readings)
    n = lo.size
    if not 0 <= tau < n:
        raise ValueError(f"tau must satisfy 0 <= tau < n, got tau={tau}, n={n}")
    profile = transition_profile(readings)
    counts = profile.counts
    if counts.size == 0 or counts.max() == 0:
        # nothing covers any open region; fall back to the plain midpoint mean
        return float(np.mean((lo + hi) / 2.0)), True
    mids = profile.region_midpoints
    qualified = counts >= n - tau
    degenerate = not bool(qualified.any())
    if degenerate:
        qualified = counts == counts.max()
    w = counts[qualified].astype(float)
    return float(np.dot(w, mids[qualified]) / w.sum()), degenerate


def fuse_bi(readings: Sequence[Interval] | np.ndarray, tau: int) -> float:
    """Brooks-Iyengar fused estimate (coverage-weighted mean of qualifying regions)."""
    value, _ = fuse_bi_with_flag(readings, tau)
    return value


@lru_cache(maxsize=None)
def _subset_indices(n: int, k: int) -> np.ndarray:
    return np.array(list(itertools.combinations(range(n), k)), dtype=np.intp)


@dataclass(frozen=True)
class GbiWeights:
    """Per-subset weights and midpoints for the generalized Brooks-Iyengar fuser.

    subsets[t] lists the sensors assumed non-faulty in term t (size n - tau);
    weights[t] and midpoints[t] are that term's weight and intersection
    midpoint (midpoint 0 by convention when the weight is zero).
    """

    subsets: np.ndarray
    weights: np.ndarray
    midpoints: np.ndarray

    def items(self) -> Iterator[tuple[tuple[int, ...], float, float]]:
        for row, w, mid in zip(self.subsets, self.weights, self.midpoints):
            yield tuple(int(i) for i in row), float(w), float(mid)


def gbi_bayes_weights(readings: Sequence[Interval] | np.ndarray, tau: int) -> GbiWeights:
    """Weights that make the generalized Brooks-Iyengar average equal the
    posterior mean of the target under the uniform-cell fault model.

    For each size-(n - tau) subset of sensors the weight is the length of the
    subset's intersection times the product of the member intervals' inverse
    widths; the midpoint is the intersection midpoint.  Zero-width readings
    are rejected (their inverse width is undefined).
    """
    lo, hi = _bounds(readings)
    n = lo.size
    if not 0 <= tau < n:
        raise ValueError(f"tau must satisfy 0 <= tau < n, got tau={tau}, n={n}")
    widths = hi - lo
    if np.any(widths <= 0):
        raise ValueError("every reading must have positive width")
    idx = _subset_indices(n, n - tau)
    max_lo = lo[idx].max(axis=1)
    min_hi = hi[idx].min(axis=1)
    overlap = np.maximum(min_hi - max_lo, 0.0)
    weights = overlap * (1.0 / widths)[idx].prod(axis=1)
    midpoints = np.where(weights > 0, (min_hi + max_lo) / 2.0, 0.0)
    return GbiWeights(subsets=idx, weights=weights, midpoints=midpoints)


def fuse_gbi(weights: GbiWeights) -> float:
    """Weight-normalized average of the per-subset midpoints."""
    total = float(weights.weights.sum())
    if total <= 0.0:
        raise DegenerateInputError("every subset weight is zero; no subset has a nonempty intersection")
    return float(np.dot(weights.weights, weights.midpoints) / total)


def fuse_gbi_oneopt(readings: Sequence[Interval] | np.ndarray, tau: int) -> float:
    """Generalized Brooks-Iyengar estimate with the posterior-mean weights."""
    return fuse_gbi(gbi_bayes_weights(readings, tau))


@dataclass(frozen=True)
class LinearCoefficients:
    """Affine fuser coefficients: sum(eps*lo) + sum(delta*hi) + gamma."""

    eps: np.ndarray
    delta: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        eps = np.asarray(self.eps, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "delta", delta)
        if eps.ndim != 1 or delta.shape != eps.shape:
            raise ValueError("eps and delta must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(eps)) and np.all(np.isfinite(delta)) and np.isfinite(self.gamma)):
            raise ValueError("coefficients must be finite")


def fuse_linear(readings: Sequence[Interval] | np.ndarray, coeffs: LinearCoefficients) -> float:
    """Affine combination of the interval endpoints."""
    lo, hi = _bounds(readings)
    if lo.size != coeffs.eps.size:
        raise ValueError(f"coefficient length {coeffs.eps.size} does not match reading count {lo.size}")
    return float(np.dot(coeffs.eps, lo) + np.dot(coeffs.delta, hi) + coeffs.gamma)
