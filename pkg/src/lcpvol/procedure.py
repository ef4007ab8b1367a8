"""Multiscale local change point (LCP) selection of the interval of homogeneity.

A scheme supplies lengths ``N_0 < N_1 < ... < N_K < N_{K+1}``.  At the estimation
point ``t`` the candidate intervals are ``I_k = [t - N_k, t)``; step ``k`` scans every
``tau`` in ``J_k = [t - N_k, t - N_{k-1})`` using the testing interval ``I_{k+1}``.  The
last length is therefore used for testing only.

The heavy lifting happens in :func:`scan_windows`, which evaluates every scale for a
whole batch of windows (replicates, time points) at once.  :func:`run_lcp` and
:func:`rolling_estimate` wrap it for single series.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from lcpvol.changepoint import split_values
from lcpvol.core import THETA_FLOOR, Interval, ReturnSeries, kl
from lcpvol.errors import (
    BoundsError,
    DomainError,
    InsufficientHistoryError,
    LcpError,
    SchemeError,
)

PUBLISHED_GRID = (5, 7, 10, 13, 16, 20, 24, 30, 38, 47, 59, 73, 92)

# Relative slack for the probability-one stability checks; covers last-bit
# differences between the scan and the recomputed check only.
STABILITY_RTOL = 1e-12


@dataclass(frozen=True)
class IntervalScheme:
    lengths: tuple[int, ...]
    u0: float
    u: float

    def __post_init__(self):
        lengths = tuple(int(n) for n in self.lengths)
        object.__setattr__(self, "lengths", lengths)
        if len(lengths) < 3:
            raise SchemeError(
                "a scheme needs at least three lengths: N_0, one testable scale and "
                "the testing-only N_{K+1}"
            )
        if lengths[0] < 1 or any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise SchemeError(f"lengths must be strictly increasing positive integers: {lengths}")
        if not 0 < self.u0 <= self.u < 1:
            raise SchemeError(f"need 0 < u0 <= u < 1, got u0={self.u0}, u={self.u}")
        for k, r in enumerate(self.ratios, start=1):
            if not self.u0 - 1e-15 <= r <= self.u + 1e-15:
                raise SchemeError(
                    f"N_{k-1}/N_{k} = {r:.6g} violates u0={self.u0:.6g} <= ratio <= u={self.u:.6g}"
                )

    @classmethod
    def from_lengths(cls, lengths: Sequence[int], u0: float | None = None, u: float | None = None):
        lengths = tuple(int(n) for n in lengths)
        if len(lengths) >= 2 and all(b > a > 0 for a, b in zip(lengths, lengths[1:])):
            ratios = [a / b for a, b in zip(lengths, lengths[1:])]
            u0 = min(ratios) if u0 is None else u0
            u = max(ratios) if u is None else u
        return cls(lengths, 0.5 if u0 is None else u0, 0.5 if u is None else u)

    @classmethod
    def published(cls) -> "IntervalScheme":
        return cls.from_lengths(PUBLISHED_GRID)

    @property
    def ratios(self) -> list[float]:
        return [a / b for a, b in zip(self.lengths, self.lengths[1:])]

    @property
    def n_scales(self) -> int:
        """Number of tested scales K."""
        return len(self.lengths) - 2

    @property
    def window(self) -> int:
        """History needed for the full procedure, ``N_{K+1}``."""
        return self.lengths[-1]

    @property
    def c_u(self) -> float:
        return 1.0 / (self.u**-0.5 - 1.0)

    def fingerprint(self) -> str:
        return hashlib.sha256(",".join(map(str, self.lengths)).encode()).hexdigest()[:16]

    def truncated(self, history: int) -> "IntervalScheme | None":
        """Sub-scheme usable with ``history`` points, or None if no scale is testable."""
        keep = [n for n in self.lengths if n <= history]
        if len(keep) < 3:
            return None
        return IntervalScheme(tuple(keep), self.u0, self.u)


def build_scheme(
    n0: int = 5,
    growth: float = 1.25,
    k_max: int = 12,
    u0: float | None = None,
    u: float | None = None,
) -> IntervalScheme:
    """Geometric scheme ``N_k = ceil(n0 * growth**k)`` for ``k = 0..k_max``, deduplicated.

    The last length serves as the testing interval of the largest scale.  ``u0`` and
    ``u`` default to the observed ratio range; explicit values are validated.
    """
    if n0 < 2:
        raise SchemeError("n0 must be at least 2")
    if not growth > 1:
        raise SchemeError("growth must exceed 1")
    if k_max < 1:
        raise SchemeError("k_max must be at least 1")
    lengths: list[int] = []
    for k in range(k_max + 1):
        # round() guards against ceil(10.000000000000002) == 11
        n = math.ceil(round(n0 * growth**k, 9))
        if not lengths or n > lengths[-1]:
            lengths.append(n)
    return IntervalScheme.from_lengths(lengths, u0, u)


@dataclass(frozen=True)
class CalibProvenance:
    r: float
    alpha: float
    replicates: int
    seed: int
    scheme: tuple[int, ...]


@dataclass(frozen=True)
class CriticalValues:
    z: tuple[float, ...]
    calib_config: CalibProvenance | None = None

    def __post_init__(self):
        z = tuple(float(v) for v in self.z)
        object.__setattr__(self, "z", z)
        if not z:
            raise DomainError("critical values must not be empty")
        if not all(v > 0 for v in z):
            raise DomainError(f"critical values must be positive: {z}")

    def check(self, scheme: IntervalScheme) -> None:
        if len(self.z) != scheme.n_scales:
            raise SchemeError(
                f"{len(self.z)} critical values for a scheme with {scheme.n_scales} scales"
            )
        if self.calib_config is not None and tuple(self.calib_config.scheme) != scheme.lengths:
            raise SchemeError(
                f"critical values were calibrated for scheme {self.calib_config.scheme}, "
                f"not {scheme.lengths}"
            )

    def array(self) -> np.ndarray:
        return np.asarray(self.z, float)


@dataclass(frozen=True)
class StepStat:
    k: int
    stat: float
    z: float
    accepted: bool
    tau_hat: int


@dataclass(frozen=True)
class LcpResult:
    t_end: int
    kappa: int
    theta_hat: float
    selected_interval: Interval
    step_stats: tuple[StepStat, ...]
    change_point: int | None
    theta_tilde: tuple[float, ...] = field(repr=False, default=())
    truncated: bool = False
    degenerate: bool = False

    @property
    def length(self) -> int:
        return len(self.selected_interval)


@dataclass
class ScanResult:
    """Per-window arrays produced by :func:`scan_windows`.

    Shapes use ``B`` for the batch and ``K`` for the number of scales.
    ``tau_offset`` is the distance ``t - tau_hat`` of the maximizing split.
    """

    theta_tilde: np.ndarray  # (B, K + 2), estimates on I_0 .. I_{K+1}
    stats: np.ndarray  # (B, K)
    tau_offset: np.ndarray  # (B, K)

    def kappa(self, z) -> np.ndarray:
        """Index of the largest accepted interval for critical values ``z``."""
        z = np.asarray(z, float)
        accepted = np.cumprod(self.stats <= z, axis=-1)
        return accepted.sum(axis=-1)

    def theta_hat(self, kappa) -> np.ndarray:
        return np.take_along_axis(self.theta_tilde, np.asarray(kappa)[..., None], -1)[..., 0]

    def theta_hat_path(self, kappa) -> np.ndarray:
        """``theta_hat_k`` for ``k = 0..K``: the estimate after the first ``k`` steps."""
        K = self.stats.shape[-1]
        idx = np.minimum(np.arange(K + 1), np.asarray(kappa)[..., None])
        return np.take_along_axis(self.theta_tilde, idx, -1)


def window_cumsums(squared: np.ndarray) -> np.ndarray:
    """Prefix sums along the last axis with a leading zero column."""
    zeros = np.zeros(squared.shape[:-1] + (1,))
    return np.concatenate((zeros, np.cumsum(squared, axis=-1)), axis=-1)


def scan_windows(cum: np.ndarray, scheme: IntervalScheme, floor: float = THETA_FLOOR) -> ScanResult:
    """Evaluate all scales for windows whose prefix sums are ``cum``.

    ``cum`` has shape ``(..., M + 1)`` with ``M = N_{K+1}``; window position ``M``
    is the estimation point, exclusive.
    """
    lengths = scheme.lengths
    M = lengths[-1]
    if cum.shape[-1] != M + 1:
        raise SchemeError(f"windows have {cum.shape[-1] - 1} points, scheme needs {M}")
    batch = cum.shape[:-1]
    K = scheme.n_scales
    n = np.asarray(lengths)
    theta_tilde = np.maximum((cum[..., M][..., None] - cum[..., M - n]) / n, floor)
    stats = np.empty(batch + (K,))
    tau_offset = np.empty(batch + (K,), dtype=np.int64)
    for k in range(1, K + 1):
        # tau ascending, so argmax ties resolve to the smallest tau
        d = np.arange(lengths[k], lengths[k - 1], -1)
        vals = split_values(cum, M - lengths[k + 1], M - d, M, floor)
        best = np.argmax(vals, axis=-1)
        stats[..., k - 1] = np.take_along_axis(vals, best[..., None], -1)[..., 0]
        tau_offset[..., k - 1] = d[best]
    return ScanResult(theta_tilde, stats, tau_offset)


def stability_check(scan: ScanResult, z, scheme: IntervalScheme, a_prime=None) -> dict:
    """Count violations of the two stability inequalities over a batch of runs.

    One-step: ``N_k K(theta_hat_k, theta_hat_{k+1}) <= z_k`` for every accepted ``k``.
    Multi-step: ``N_k K(theta_hat_k, theta_hat_k') <= a'^2 c_u^2 max_{l>=k} z_l`` for
    accepted ``k < k'``.  ``a_prime`` defaults per run to ``sqrt(max/min)`` of the
    run's ``theta_hat`` path, the triangle constant of the tightest admissible set.
    """
    z = np.asarray(z, float)
    K = scheme.n_scales
    kappa = scan.kappa(z)
    path = scan.theta_hat_path(kappa)  # (B, K+1)
    n = np.asarray(scheme.lengths[: K + 1], float)
    if a_prime is None:
        a2 = path.max(axis=-1) / path.min(axis=-1)
    else:
        a2 = np.full(kappa.shape, float(a_prime) ** 2)
    zbar = np.maximum.accumulate(z[::-1])[::-1]
    one_step = 0
    multi_step = 0
    checked = 0
    worst_ratio = 0.0
    for k in range(1, K):
        accepted = kappa >= k
        lhs = n[k] * kl(path[..., k], path[..., k + 1])
        bad = accepted & (lhs > z[k - 1] * (1 + STABILITY_RTOL))
        one_step += int(bad.sum())
        checked += int(accepted.sum())
        bound = a2 * scheme.c_u**2 * zbar[k - 1]
        for kp in range(k + 1, K + 1):
            lhs_m = n[k] * kl(path[..., k], path[..., kp])
            multi_step += int((accepted & (lhs_m > bound * (1 + STABILITY_RTOL))).sum())
            if accepted.any():
                worst_ratio = max(worst_ratio, float((lhs_m / bound)[accepted].max()))
    return {
        "one_step_violations": one_step,
        "multi_step_violations": multi_step,
        "accepted_steps": checked,
        "runs": int(np.size(kappa)),
        "worst_multi_step_ratio": worst_ratio,
    }


def _result_from_scan(scan: ScanResult, b, z, scheme: IntervalScheme, t_end: int,
                      truncated: bool, floor: float) -> LcpResult:
    K = scheme.n_scales
    stats = scan.stats[b]
    offsets = scan.tau_offset[b]
    steps = []
    kappa = K
    change_point = None
    for k in range(1, K + 1):
        accepted = bool(stats[k - 1] <= z[k - 1])
        steps.append(StepStat(k, float(stats[k - 1]), float(z[k - 1]), accepted,
                              int(t_end - offsets[k - 1])))
        if not accepted:
            kappa = k - 1
            change_point = int(t_end - offsets[k - 1])
            break
    tt = scan.theta_tilde[b]
    theta_hat = float(tt[kappa])
    return LcpResult(
        t_end=t_end,
        kappa=kappa,
        theta_hat=theta_hat,
        selected_interval=Interval(t_end - scheme.lengths[kappa], t_end),
        step_stats=tuple(steps),
        change_point=change_point,
        theta_tilde=tuple(float(v) for v in tt),
        truncated=truncated,
        degenerate=theta_hat <= floor,
    )


def run_lcp(
    series: ReturnSeries,
    t_end: int,
    scheme: IntervalScheme,
    crits: CriticalValues,
    *,
    floor: float = THETA_FLOOR,
) -> LcpResult:
    """Select the interval of homogeneity ending (exclusively) at position ``t_end``.

    With fewer than ``N_{K+1}`` points of history the scan stops at the largest scale
    whose testing interval fits and the result is flagged ``truncated``.
    """
    crits.check(scheme)
    if not 0 < t_end <= len(series):
        raise BoundsError(f"t_end={t_end} outside series of length {len(series)}")
    z = crits.array()
    used = scheme
    truncated = False
    if t_end < scheme.window:
        truncated = True
        used = scheme.truncated(t_end)
        if used is None:
            n0 = scheme.lengths[0]
            if t_end < n0:
                raise InsufficientHistoryError(
                    f"t_end={t_end} has fewer than N_0={n0} points of history"
                )
            y = series.returns[t_end - n0 : t_end]
            theta = max(float(np.dot(y, y)) / n0, floor)
            return LcpResult(t_end, 0, theta, Interval(t_end - n0, t_end), (), None,
                             (theta,), True, theta <= floor)
        z = z[: used.n_scales]
    y2 = series.squared[t_end - used.window : t_end]
    scan = scan_windows(window_cumsums(y2[None, :]), used, floor)
    return _result_from_scan(scan, 0, z, used, t_end, truncated, floor)


@dataclass
class PointFailure:
    t_end: int
    error: LcpError


def rolling_estimate(
    series: ReturnSeries,
    scheme: IntervalScheme,
    crits: CriticalValues,
    t_range: Sequence[int] | range | None = None,
    *,
    floor: float = THETA_FLOOR,
) -> list[LcpResult | PointFailure]:
    """Apply :func:`run_lcp` at every estimation point in ``t_range``.

    Failures are recorded in place as :class:`PointFailure` and never abort the sweep.
    ``t_range`` defaults to every point with at least ``N_0 + N_1`` history.
    """
    crits.check(scheme)
    if t_range is None:
        t_range = range(scheme.lengths[0] + scheme.lengths[1], len(series) + 1)
    points = list(t_range)
    out: list[LcpResult | PointFailure | None] = [None] * len(points)
    full = [i for i, t in enumerate(points) if scheme.window <= t <= len(series)]
    if full:
        y2 = series.squared
        M = scheme.window
        windows = np.lib.stride_tricks.sliding_window_view(y2, M)
        ends = np.array([points[i] for i in full])
        z = crits.array()
        for lo in range(0, len(full), 4096):
            sel = ends[lo : lo + 4096]
            scan = scan_windows(window_cumsums(windows[sel - M]), scheme, floor)
            for j, t in enumerate(sel):
                out[full[lo + j]] = _result_from_scan(scan, j, z, scheme, int(t), False, floor)
    for i, t in enumerate(points):
        if out[i] is None:
            try:
                out[i] = run_lcp(series, t, scheme, crits, floor=floor)
            except LcpError as exc:
                out[i] = PointFailure(t, exc)
    return out


_CHUNK_ELEMENTS = 4_000_000


def estimate_array(series_squared: np.ndarray, scheme: IntervalScheme, z,
                   t_start: int | None = None, floor: float = THETA_FLOOR):
    """Rolling estimates for a batch of paths, as arrays.

    ``series_squared`` has shape ``(R, n)``.  Returns ``(t_ends, scan, kappa)`` for
    every estimation point ``t_end`` in ``[max(t_start, N_{K+1}), n]``.
    """
    sq = np.atleast_2d(series_squared)
    M = scheme.window
    start = M if t_start is None else max(int(t_start), M)
    t_ends = np.arange(start, sq.shape[-1] + 1)
    view = np.lib.stride_tricks.sliding_window_view(sq, M, axis=-1)
    # bound the (R, points, M) window copies and the split arrays built from them
    step = max(1, _CHUNK_ELEMENTS // (sq.shape[0] * M))
    parts = [
        scan_windows(window_cumsums(view[:, t_ends[lo : lo + step] - M]), scheme, floor)
        for lo in range(0, t_ends.size, step)
    ]
    scan = ScanResult(*(np.concatenate([getattr(p, f) for p in parts], axis=1)
                        for f in ("theta_tilde", "stats", "tau_offset")))
    return t_ends, scan, scan.kappa(z)
