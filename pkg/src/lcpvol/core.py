"""Parametric building blocks for local constant volatility models.

Within an interval of homogeneity the squared returns follow
``Y_t = theta * eps_t**2`` with Gaussian ``eps_t``; everything in this module is a
closed-form consequence of that model.  Intervals are half-open ``[start, end)`` and
address positions in the series arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from lcpvol.errors import (
    BoundsError,
    DataValidationError,
    DegenerateEstimateError,
    DomainError,
    NumericalError,
    UnsupportedInLiveDataError,
)

# Floor for a variance estimate on an all-zero stretch (stale prices).
THETA_FLOOR = 1e-12


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    """Log-returns indexed by consecutive integer time points.

    ``true_vol`` holds the variance ``sigma_t**2`` (not the standard deviation) and is
    only available for simulated data.
    """

    returns: np.ndarray
    timestamps: np.ndarray | None = None
    true_vol: np.ndarray | None = None
    dates: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        returns = _frozen(self.returns, float)
        if returns.ndim != 1:
            raise DataValidationError("returns must be one-dimensional")
        if not np.all(np.isfinite(returns)):
            bad = int(np.flatnonzero(~np.isfinite(returns))[0])
            raise DataValidationError(f"non-finite return at index {bad}")
        n = returns.size
        if self.timestamps is None:
            ts = _frozen(np.arange(n), np.int64)
        else:
            ts = _frozen(self.timestamps, np.int64)
            if ts.shape != (n,):
                raise DataValidationError("timestamps and returns differ in length")
            if n > 1 and np.any(np.diff(ts) <= 0):
                raise DataValidationError("timestamps must be strictly increasing")
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "timestamps", ts)
        if self.true_vol is not None:
            tv = _frozen(self.true_vol, float)
            if tv.shape != (n,):
                raise DataValidationError("true_vol and returns differ in length")
            if not np.all(tv > 0):
                bad = int(np.flatnonzero(~(tv > 0))[0])
                raise DataValidationError(f"true_vol must be positive (index {bad})")
            object.__setattr__(self, "true_vol", tv)

    def __len__(self) -> int:
        return self.returns.size

    @property
    def squared(self) -> np.ndarray:
        return self.returns**2

    def scaled(self, c: float) -> "ReturnSeries":
        """Returns multiplied by ``c``; the true variance scales by ``c**2``."""
        tv = None if self.true_vol is None else self.true_vol * c * c
        return ReturnSeries(self.returns * c, self.timestamps, tv, self.dates)


@dataclass(frozen=True)
class Interval:
    start: int
    end: int

    def __post_init__(self):
        if not self.start < self.end:
            raise BoundsError(f"empty interval [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def contains(self, other: "Interval") -> bool:
        return self.start <= other.start and other.end <= self.end


@dataclass(frozen=True)
class ParamBounds:
    """Admissible parameter range: ``a**2 <= theta0 / theta <= a**-2``."""

    a_const: float

    def __post_init__(self):
        if not 0 < self.a_const <= 1:
            raise DomainError(f"a_const must lie in (0, 1], got {self.a_const}")

    @classmethod
    def from_values(cls, thetas) -> "ParamBounds":
        """Tightest bounds containing every value in ``thetas``."""
        arr = np.asarray(thetas, float)
        return cls(min(1.0, math.sqrt(arr.min() / arr.max())))

    @property
    def triangle_constant(self) -> float:
        return 1.0 / self.a_const

    def admits(self, theta0: float, theta: float) -> bool:
        ratio = theta0 / theta
        return self.a_const**2 <= ratio <= self.a_const**-2


def _check_interval(series: ReturnSeries, interval: Interval) -> None:
    if interval.start < 0 or interval.end > len(series):
        raise BoundsError(
            f"interval [{interval.start}, {interval.end}) outside series of length {len(series)}"
        )


def log_returns(prices: Sequence[float], timestamps=None) -> ReturnSeries:
    """Log-returns ``log(S_t / S_{t-1})``; the output is one shorter than the input."""
    p = np.asarray(prices, float)
    if p.ndim != 1 or p.size < 2:
        raise DataValidationError("need at least two prices")
    bad = np.flatnonzero(~(p > 0))
    if bad.size:
        raise DataValidationError(f"non-positive price at index {int(bad[0])}")
    ts = None if timestamps is None else np.asarray(timestamps)[1:]
    return ReturnSeries(np.log(p[1:] / p[:-1]), ts)


def kl(theta1, theta2):
    """Vectorized Kullback-Leibler divergence between N(0, theta1) and N(0, theta2).

    No validation; use :func:`kl_divergence` for checked scalar input.
    """
    x = np.asarray(theta1, float) / np.asarray(theta2, float)
    u = x - 1.0
    near = np.abs(u) < 0.5
    # u - log1p(u) avoids cancellation near x == 1; log(x) keeps tiny x finite.
    with np.errstate(divide="ignore"):
        far = u - np.log(np.where(near, 1.0, x))
    return np.maximum(0.5 * np.where(near, u - np.log1p(np.where(near, u, 0.0)), far), 0.0)


def kl_divergence(theta1: float, theta2: float) -> float:
    if not (theta1 > 0 and theta2 > 0):
        raise DomainError(f"KL divergence needs positive variances, got {theta1}, {theta2}")
    return float(kl(theta1, theta2))


def local_mle(
    series: ReturnSeries,
    interval: Interval,
    *,
    floor: float = THETA_FLOOR,
    strict: bool = False,
) -> float:
    """Mean squared return over ``interval``.

    An all-zero stretch yields ``floor`` unless ``strict`` is set, in which case
    :class:`DegenerateEstimateError` is raised.
    """
    _check_interval(series, interval)
    y = series.returns[interval.start : interval.end]
    theta = float(np.dot(y, y) / len(interval))
    if theta <= 0 or theta < floor:
        if strict:
            raise DegenerateEstimateError(
                f"zero variance estimate on [{interval.start}, {interval.end})"
            )
        return floor
    return theta


def is_degenerate(series: ReturnSeries, interval: Interval, floor: float = THETA_FLOOR) -> bool:
    _check_interval(series, interval)
    y = series.returns[interval.start : interval.end]
    return float(np.dot(y, y) / len(interval)) < floor


def loglik(series: ReturnSeries, interval: Interval, theta: float) -> float:
    """Gaussian log-likelihood of a constant variance ``theta`` over ``interval``."""
    _check_interval(series, interval)
    if not theta > 0:
        raise DomainError("theta must be positive")
    y = series.returns[interval.start : interval.end]
    n = len(interval)
    s = float(np.dot(y, y))
    return -0.5 * n * math.log(2 * math.pi * theta) - s / (2 * theta)


def fitted_loglik_ratio(series: ReturnSeries, interval: Interval, theta: float) -> float:
    if not theta > 0:
        raise DomainError("theta must be positive")
    return len(interval) * kl_divergence(local_mle(series, interval), theta)


def _geometric_bisect(f, lo: float, hi: float, rtol: float, max_iter: int = 400) -> float:
    flo = f(lo)
    fhi = f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise NumericalError(
            f"root not bracketed on [{lo:.6g}, {hi:.6g}]: f(lo)={flo:.6g}, f(hi)={fhi:.6g}"
        )
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi)
        fmid = f(mid)
        if (fmid > 0) == (flo > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
        if hi - lo <= rtol * lo:
            return math.sqrt(lo * hi)
    raise NumericalError(
        f"bisection did not converge after {max_iter} steps; bracket [{lo:.17g}, {hi:.17g}]"
    )


def confidence_level_value(alpha: float) -> float:
    """Smallest ``z`` with ``2 exp(-z) <= alpha``."""
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")
    return math.log(2.0 / alpha)


def confidence_set(
    series: ReturnSeries,
    interval: Interval,
    alpha: float,
    *,
    theta_min: float = THETA_FLOOR,
    rtol: float = 1e-10,
) -> tuple[float, float]:
    """Roots of ``N K(theta_tilde, theta) = log(2/alpha)`` on either side of the MLE."""
    z = confidence_level_value(alpha)
    theta_tilde = local_mle(series, interval)
    n = len(interval)

    def excess(theta):
        return n * float(kl(theta_tilde, theta)) - z

    lower = _geometric_bisect(excess, theta_min, theta_tilde, rtol)
    upper = _geometric_bisect(excess, theta_tilde, theta_tilde * math.exp(64), rtol)
    return lower, upper


def risk_constant(r: float) -> float:
    """``2 r Gamma(r)``, the parametric bound on ``E |N K(theta_tilde, theta*)|**r``."""
    if not r > 0:
        raise DomainError("r must be positive")
    return 2.0 * r * math.gamma(r)


def modeling_bias(series: ReturnSeries, interval: Interval, theta: float) -> float:
    """Sum of ``K(f(t), theta)`` over the interval; needs the simulated true variance."""
    if series.true_vol is None:
        raise UnsupportedInLiveDataError("modeling bias needs true_vol (simulation only)")
    _check_interval(series, interval)
    if not theta > 0:
        raise DomainError("theta must be positive")
    f = series.true_vol[interval.start : interval.end]
    return float(np.sum(kl(f, theta)))


def empirical_triangle_constant(thetas) -> float:
    """Smallest constant c with ``K(a,b)**.5 <= c (K(a,o)**.5 + K(b,o)**.5)`` over all triples."""
    t = np.asarray(thetas, float)
    a, b, o = np.meshgrid(t, t, t, indexing="ij")
    lhs = np.sqrt(kl(a, b))
    rhs = np.sqrt(kl(a, o)) + np.sqrt(kl(b, o))
    mask = lhs > 0
    if not mask.any():
        return 1.0
    with np.errstate(divide="ignore"):
        ratio = np.where(rhs[mask] > 0, lhs[mask] / rhs[mask], np.inf)
    return float(max(1.0, ratio.max()))
