"""Simulated switching-regime volatility processes and experiment drivers.

Every replicate draws from its own stream derived from ``(seed, replicate)``, so the
output of each experiment depends only on its inputs and not on how replicates are
batched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from lcpvol.calibration import replicate_rng
from lcpvol.changepoint import change_contrast
from lcpvol.core import ParamBounds, ReturnSeries, kl
from lcpvol.errors import DomainError, ExperimentConfigError
from lcpvol.procedure import CriticalValues, IntervalScheme, estimate_array, stability_check

LAWS = ("gaussian", "student5")
STUDENT5_SCALE = math.sqrt(5.0 / 3.0)


@dataclass(frozen=True)
class JumpSpec:
    """Piecewise constant variance: ``segments`` is a sequence of ``(length, sigma2)``."""

    segments: tuple[tuple[int, float], ...]
    innovation_law: str = "gaussian"
    replicates: int = 1000
    seed: int = 0

    def __post_init__(self):
        segs = tuple((int(n), float(s2)) for n, s2 in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise DomainError("a jump spec needs at least one segment")
        if any(n < 1 for n, _ in segs):
            raise DomainError("segment lengths must be at least 1")
        if any(not s2 > 0 for _, s2 in segs):
            raise DomainError("segment variances must be positive")
        if self.innovation_law not in LAWS:
            raise DomainError(f"unknown innovation law {self.innovation_law!r}")
        if self.replicates < 1:
            raise DomainError("replicates must be positive")

    @property
    def length(self) -> int:
        return sum(n for n, _ in self.segments)

    @property
    def change_points(self) -> list[int]:
        """Positions where a new segment starts."""
        return list(np.cumsum([n for n, _ in self.segments])[:-1])

    @property
    def jump_magnitudes(self) -> list[float]:
        s = [s2 for _, s2 in self.segments]
        return [b / a for a, b in zip(s, s[1:])]

    def truth(self) -> np.ndarray:
        return np.repeat([s2 for _, s2 in self.segments], [n for n, _ in self.segments])


def figure_spec(magnitude: float, innovation_law: str = "gaussian", replicates: int = 1000,
                seed: int = 0, segment_length: int = 150, base: float = 1.0) -> JumpSpec:
    """Default jump study: four segments alternating ``base`` and ``magnitude * base``."""
    levels = (base, magnitude * base, base, magnitude * base)
    return JumpSpec(tuple((segment_length, v) for v in levels), innovation_law, replicates, seed)


def innovations(rng: np.random.Generator, n: int, law: str) -> np.ndarray:
    """Unit-variance innovations; Student t_5 draws are divided by sqrt(5/3)."""
    if law == "gaussian":
        return rng.standard_normal(n)
    if law == "student5":
        return rng.standard_t(5, n) / STUDENT5_SCALE
    raise DomainError(f"unknown innovation law {law!r}")


def simulate_jump_process(spec: JumpSpec, replicate: int) -> ReturnSeries:
    truth = spec.truth()
    eps = innovations(replicate_rng(spec.seed, replicate), truth.size, spec.innovation_law)
    return ReturnSeries(np.sqrt(truth) * eps, true_vol=truth)


def simulate_returns(spec: JumpSpec, replicates: Sequence[int]) -> np.ndarray:
    """Returns of several replicates stacked as rows."""
    truth = np.sqrt(spec.truth())
    out = np.empty((len(replicates), truth.size))
    for row, i in enumerate(replicates):
        out[row] = truth * innovations(replicate_rng(spec.seed, i), truth.size, spec.innovation_law)
    return out


class StabilityTally:
    """Running totals of stability checks across experiments."""

    def __init__(self):
        self.runs = 0
        self.accepted_steps = 0
        self.one_step_violations = 0
        self.multi_step_violations = 0
        self.worst_multi_step_ratio = 0.0

    def add(self, report: dict) -> None:
        self.runs += report["runs"]
        self.accepted_steps += report["accepted_steps"]
        self.one_step_violations += report["one_step_violations"]
        self.multi_step_violations += report["multi_step_violations"]
        self.worst_multi_step_ratio = max(self.worst_multi_step_ratio,
                                          report["worst_multi_step_ratio"])

    def as_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class StudyBands:
    t_ends: np.ndarray
    truth: np.ndarray  # variance at the estimation point
    theta_quantiles: np.ndarray  # (3, T) for the 25/50/75 percentiles
    length_quantiles: np.ndarray
    stability: dict = field(default_factory=dict)

    def rows(self):
        for j, t in enumerate(self.t_ends):
            yield (int(t), float(self.truth[j]), *self.theta_quantiles[:, j], *self.length_quantiles[:, j])


QUANTILES = (25, 50, 75)


def replicate_study(spec: JumpSpec, scheme: IntervalScheme, crits: CriticalValues,
                    chunk: int = 100, tally: StabilityTally | None = None) -> StudyBands:
    """Pointwise quartiles of the estimate and of the selected length across replicates.

    Estimation points run from ``N_{K+1}`` (the first point with full history) to the
    end of the series; the estimate at ``t`` uses returns before ``t`` only.
    """
    if spec.replicates < 100:
        raise ExperimentConfigError("quartile bands need at least 100 replicates")
    crits.check(scheme)
    z = crits.array()
    lengths = np.asarray(scheme.lengths)
    thetas, sizes = [], []
    own = StabilityTally()
    t_ends = None
    for lo in range(0, spec.replicates, chunk):
        reps = range(lo, min(lo + chunk, spec.replicates))
        r = simulate_returns(spec, reps)
        t_ends, scan, kappa = estimate_array(r**2, scheme, z)
        thetas.append(scan.theta_hat(kappa))
        sizes.append(lengths[kappa])
        report = stability_check(scan, z, scheme)
        own.add(report)
        if tally is not None:
            tally.add(report)
    theta = np.concatenate(thetas)
    size = np.concatenate(sizes)
    truth = spec.truth()[t_ends - 1]
    return StudyBands(
        t_ends,
        truth,
        np.percentile(theta, QUANTILES, axis=0),
        np.percentile(size, QUANTILES, axis=0),
        own.as_dict(),
    )


@dataclass(frozen=True)
class SensitivityReport:
    non_rejection: float
    se: float
    bound: float
    z_extra: float
    z_backed_out: float
    contrast: float
    a_prime_sq: float
    condition_holds: bool
    replicates: int


def _two_regime_paths(theta_before, theta_after, n_before, n_after, replicates, seed, law):
    spec = JumpSpec(((n_before, theta_before), (n_after, theta_after)), law, replicates, seed)
    return simulate_returns(spec, range(replicates))


def sensitivity_experiment(
    theta_before: float,
    theta_after: float,
    scheme: IntervalScheme,
    crits: CriticalValues,
    z_extra: float,
    replicates: int,
    *,
    k_star: int,
    change_lag: int | None = None,
    seed: int = 0,
    a_prime: float | None = None,
    innovation_law: str = "gaussian",
    tally: StabilityTally | None = None,
) -> SensitivityReport:
    """Frequency with which ``I_{k*+1}`` survives a single change inside ``J_{k*+1}``.

    The change sits ``change_lag`` points before the estimation point (default: the
    middle of ``J_{k*+1}``), and the path is exactly ``N_{k*+2}`` long so the testing
    interval holds one change.  The probability of survival is bounded by
    ``4 exp(-z)`` whenever ``N_{k*+2} d^2 >= 2 a'^2 (z_{k*+1} + z)``.
    """
    crits.check(scheme)
    K = scheme.n_scales
    n = scheme.lengths
    if not 0 <= k_star <= K - 1:
        raise ExperimentConfigError(f"k_star must lie in 0..{K - 1}")
    lo, hi = n[k_star], n[k_star + 1]
    if change_lag is None:
        change_lag = (lo + 1 + hi) // 2
    if not lo < change_lag <= hi:
        raise ExperimentConfigError(
            f"change lag {change_lag} must lie in ({lo}, {hi}] so the change falls in J_(k*+1)"
        )
    c1 = n[k_star] / n[k_star + 2]
    c2 = n[k_star + 1] / n[k_star + 2]
    d2 = change_contrast(theta_before, theta_after, c1, c2) if theta_before != theta_after else 0.0
    if a_prime is None:
        a_prime = ParamBounds.from_values([theta_before, theta_after]).triangle_constant
    a2 = a_prime**2
    z_next = crits.z[k_star]
    z_backed = n[k_star + 2] * d2 / (2 * a2) - z_next
    holds = z_backed >= z_extra

    M = scheme.window
    r = _two_regime_paths(theta_before, theta_after, M - change_lag, change_lag, replicates,
                          seed, innovation_law)
    z = crits.array()
    _, scan, kappa = estimate_array(r**2, scheme, z, t_start=M)
    if tally is not None:
        tally.add(stability_check(scan, z, scheme))
    survived = (kappa[:, 0] >= k_star + 1).astype(float)
    freq = float(survived.mean())
    se = math.sqrt(max(freq * (1 - freq), 1.0 / replicates) / replicates)
    return SensitivityReport(freq, se, 4 * math.exp(-z_extra), z_extra, z_backed, d2, a2, holds,
                             replicates)


@dataclass(frozen=True)
class DelayReport:
    theta_before: float
    theta_after: float
    mean_delay: float
    censored: float


def detection_delay(theta_before: float, theta_after: float, scheme: IntervalScheme,
                    crits: CriticalValues, replicates: int, *, seed: int = 0,
                    horizon: int | None = None, innovation_law: str = "gaussian",
                    tally: StabilityTally | None = None) -> DelayReport:
    """Mean number of points after a change until it is first localized.

    The change happens after ``N_{K+1}`` points of the old regime.  It counts as
    localized at elapsed time ``m`` when the selected interval is the largest one that
    excludes it, i.e. ``N_kappa < m <= N_{kappa+1}``; a plain "selected length <= m"
    rule would also fire on false alarms long before the change is seen.  A replicate
    that never localizes the change within ``horizon`` points counts with delay
    ``horizon``.
    """
    crits.check(scheme)
    M = scheme.window
    horizon = M if horizon is None else horizon
    r = _two_regime_paths(theta_before, theta_after, M, horizon, replicates, seed, innovation_law)
    z = crits.array()
    t_ends, scan, kappa = estimate_array(r**2, scheme, z, t_start=M + 1)
    if tally is not None:
        tally.add(stability_check(scan, z, scheme))
    lengths = np.asarray(scheme.lengths)
    elapsed = t_ends - M  # points observed since the change
    oracle = np.searchsorted(lengths, elapsed, side="left") - 1
    detected = (kappa == oracle) & (oracle >= 0)
    first = detected.argmax(axis=1)
    delay = elapsed[first].astype(float)
    censored = ~detected.any(axis=1)
    delay[censored] = horizon
    return DelayReport(theta_before, theta_after, float(delay.mean()), float(censored.mean()))


def delay_slope(reports: Sequence[DelayReport]) -> float:
    """Least-squares slope of log mean delay against log |theta'' - theta'|."""
    x = np.log([abs(r.theta_after - r.theta_before) for r in reports])
    y = np.log([r.mean_delay for r in reports])
    return float(np.polyfit(x, y, 1)[0])


@dataclass(frozen=True)
class OracleReport:
    k_star: int
    adaptive_to_oracle: np.ndarray  # quartiles of N K(theta_k*, theta_hat)
    oracle_loss: np.ndarray  # quartiles of N K(theta_k*, theta_true)
    adaptive_loss: np.ndarray  # quartiles of N K(theta_hat, theta_true)
    inflation: float
    sqrt_zbar: float
    oracle_selected: float  # share of replicates with theta_hat == theta_k*
    stability: dict


def oracle_comparison(spec: JumpSpec, scheme: IntervalScheme, crits: CriticalValues,
                      t_end: int | None = None, tally: StabilityTally | None = None) -> OracleReport:
    """Compare the adaptive estimate with the estimate on the ideal interval.

    The ideal scale ``k*`` is the largest one whose interval ends at ``t_end`` without
    containing the last change before ``t_end``.  ``inflation`` is the ratio of the
    median square-root losses (adaptive over oracle) against the truth.
    """
    crits.check(scheme)
    t_end = spec.length if t_end is None else t_end
    if t_end < scheme.window:
        raise ExperimentConfigError("t_end needs N_(K+1) points of history")
    K = scheme.n_scales
    changes = [c for c in spec.change_points if c < t_end]
    since = t_end - changes[-1] if changes else t_end
    fitting = [k for k in range(K + 1) if scheme.lengths[k] <= since]
    if not fitting:
        raise ExperimentConfigError("no interval fits after the last change")
    k_star = max(fitting)
    z = crits.array()
    r = simulate_returns(spec, range(spec.replicates))
    _, scan, kappa = estimate_array(r[:, :t_end] ** 2, scheme, z, t_start=t_end)
    report = stability_check(scan, z, scheme)
    if tally is not None:
        tally.add(report)
    kappa = kappa[:, 0]
    tt = scan.theta_tilde[:, 0]
    theta_hat = np.take_along_axis(tt, kappa[:, None], 1)[:, 0]
    oracle = tt[:, k_star]
    truth = spec.truth()[t_end - 1]
    n_star = scheme.lengths[k_star]
    to_oracle = n_star * kl(oracle, theta_hat)
    oracle_loss = n_star * kl(oracle, truth)
    adaptive_loss = n_star * kl(theta_hat, truth)
    zbar = max(z[max(k_star, 1) - 1 :])
    q = lambda v: np.percentile(v, QUANTILES)
    inflation = float(np.median(np.sqrt(adaptive_loss)) / np.median(np.sqrt(oracle_loss)))
    return OracleReport(k_star, q(to_oracle), q(oracle_loss), q(adaptive_loss), inflation,
                        math.sqrt(zbar), float(np.mean(theta_hat == oracle)), report)
