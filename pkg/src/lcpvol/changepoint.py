"""Likelihood-ratio change point statistics for a variance shift.

Splitting a testing interval ``I`` at ``tau`` into ``I' = [start, tau)`` and
``I'' = [tau, end)`` gives

    T(I, tau) = N'' K(theta'', theta_I) + N' K(theta', theta_I)

with all three variances estimated by their local MLE.  Sums of squared returns come
from prefix sums, so each split costs O(1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lcpvol.core import THETA_FLOOR, Interval, ReturnSeries, _check_interval, kl
from lcpvol.errors import DomainError, GeometryError, InvalidSplitError


@dataclass(frozen=True)
class SplitTest:
    tau: int
    stat: float
    left: Interval
    right: Interval


@dataclass(frozen=True)
class MaxTest:
    stat: float
    argmax_tau: int
    per_tau: tuple[SplitTest, ...]


class PrefixSums:
    """Cumulative sums of squared returns with a leading zero."""

    def __init__(self, series: ReturnSeries, floor: float = THETA_FLOOR):
        self.cum = np.concatenate(([0.0], np.cumsum(series.squared)))
        self.floor = floor

    def total(self, start, end):
        return self.cum[end] - self.cum[start]

    def mle(self, start, end):
        n = np.asarray(end) - np.asarray(start)
        return np.maximum(self.total(start, end) / n, self.floor)


def split_values(cum: np.ndarray, start, tau, end, floor: float = THETA_FLOOR):
    """Vectorized split statistic from a prefix-sum array ``cum`` (leading zero).

    ``start``, ``tau`` and ``end`` are integers or 1-d index arrays into the last axis
    of ``cum``; leading axes of ``cum`` (replicates, time points) pass through.
    """
    start, tau, end = np.broadcast_arrays(start, tau, end)
    c_start, c_tau, c_end = cum[..., start], cum[..., tau], cum[..., end]
    n_left = tau - start
    n_right = end - tau
    n_all = end - start
    th_all = np.maximum((c_end - c_start) / n_all, floor)
    th_left = np.maximum((c_tau - c_start) / n_left, floor)
    th_right = np.maximum((c_end - c_tau) / n_right, floor)
    return n_right * kl(th_right, th_all) + n_left * kl(th_left, th_all)


def _check_split(testing: Interval, tau: int) -> None:
    if not testing.start < tau < testing.end:
        raise InvalidSplitError(
            f"tau={tau} does not split [{testing.start}, {testing.end}) into two non-empty parts"
        )


def split_stat(series: ReturnSeries, testing: Interval, tau: int) -> SplitTest:
    _check_interval(series, testing)
    _check_split(testing, tau)
    ps = PrefixSums(series)
    stat = float(split_values(ps.cum, testing.start, tau, testing.end))
    return SplitTest(tau, stat, Interval(testing.start, tau), Interval(tau, testing.end))


def max_stat(series: ReturnSeries, testing: Interval, tested: Interval) -> MaxTest:
    """Maximum split statistic over every ``tau`` in ``tested``; ties go to the smallest tau."""
    _check_interval(series, testing)
    if not (testing.start < tested.start and tested.end <= testing.end):
        raise GeometryError(
            f"tested [{tested.start}, {tested.end}) must lie strictly inside "
            f"testing [{testing.start}, {testing.end})"
        )
    ps = PrefixSums(series)
    taus = np.arange(tested.start, tested.end)
    stats = split_values(ps.cum, testing.start, taus, testing.end)
    best = int(np.argmax(stats))
    per_tau = tuple(
        SplitTest(int(t), float(s), Interval(testing.start, int(t)), Interval(int(t), testing.end))
        for t, s in zip(taus, stats)
    )
    return MaxTest(float(stats[best]), int(taus[best]), per_tau)


def contrast_at(theta_before: float, theta_after: float, c):
    """Weighted KL ``(1-c) K(theta', m) + c K(theta'', m)`` minimized over ``m``.

    The minimizer is the mixture mean ``m = (1-c) theta' + c theta''``.
    """
    c = np.asarray(c, float)
    m = (1 - c) * theta_before + c * theta_after
    return (1 - c) * kl(theta_before, m) + c * kl(theta_after, m)


def change_contrast(theta_before: float, theta_after: float, c1: float, c2: float) -> float:
    """Squared contrast ``d^2`` between two variance regimes for split fractions in [c1, c2].

    For fixed ``m`` the weighted KL is linear in ``c``, so the infimum over the fraction
    sits at an end point.
    """
    if not (theta_before > 0 and theta_after > 0):
        raise DomainError("variances must be positive")
    if not 0 < c1 <= c2 < 1:
        raise DomainError(f"need 0 < c1 <= c2 < 1, got c1={c1}, c2={c2}")
    return float(min(contrast_at(theta_before, theta_after, c1), contrast_at(theta_before, theta_after, c2)))


def contrast_lower_constant(thetas, c1: float, c2: float) -> float:
    """Largest ``b`` with ``d^2 >= b (x/y - y/x)^2`` over all ordered pairs of distinct ``thetas``.

    The contrast depends on which regime comes first, so both orders are checked.
    """
    t = np.asarray(thetas, float)
    best = np.inf
    for x in t:
        for y in t:
            if x == y:
                continue
            ratio = change_contrast(x, y, c1, c2) / (x / y - y / x) ** 2
            best = min(best, ratio)
    return float(best)
