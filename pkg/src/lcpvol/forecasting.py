"""Variance forecasts, a GARCH(1,1) baseline, Value-at-Risk and backtesting.

Time convention: a forecast made at origin ``t`` uses returns up to and including
index ``t`` and targets the next ``h`` returns ``t+1 .. t+h``.  The adaptive estimate
at origin ``t`` is therefore the estimate with estimation point ``t_end = t + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, signal, special, stats
from statsmodels.tools.numdiff import approx_hess3
from statsmodels.tsa.stattools import acf

from lcpvol.core import Interval, ReturnSeries
from lcpvol.errors import (
    AlignmentError,
    BoundsError,
    DegenerateComparisonError,
    DomainError,
    FitError,
    InsufficientHistoryError,
)
from lcpvol.procedure import CriticalValues, IntervalScheme, LcpResult, rolling_estimate

VAR_LAWS = ("gaussian", "student5", "empirical")
ZONES = ("green", "yellow", "red")
MIN_GARCH_WINDOW = 250


def _check_horizon(h: int) -> None:
    if int(h) != h or h < 1:
        raise DomainError(f"horizon must be a positive integer, got {h}")


@dataclass(frozen=True)
class GarchParams:
    """``sigma2_t = omega + arch * R_{t-1}**2 + garch * sigma2_{t-1}``."""

    omega: float
    arch: float
    garch: float

    def __post_init__(self):
        if not self.omega > 0:
            raise DomainError("omega must be positive")
        if not (self.arch > 0 and self.garch > 0):
            raise DomainError("arch and garch must be positive")
        if not self.arch + self.garch < 1:
            raise DomainError(f"arch + garch = {self.arch + self.garch} is not below 1")

    @property
    def persistence(self) -> float:
        return self.arch + self.garch

    @property
    def uncond(self) -> float:
        return self.omega / (1.0 - self.persistence)

    def as_array(self) -> np.ndarray:
        return np.array([self.omega, self.arch, self.garch])


def lcp_variance_forecast(sigma2_hat: float, h: int) -> float:
    """Aggregated variance forecast ``h * sigma2_hat`` of a locally constant model."""
    _check_horizon(h)
    if not sigma2_hat > 0:
        raise DomainError("sigma2_hat must be positive")
    return h * sigma2_hat


def garch_filter(returns: np.ndarray, omega: float, arch: float, garch: float,
                 sigma2_0: float) -> np.ndarray:
    """Conditional variances ``sigma2_1 .. sigma2_n`` of ``R_1 .. R_n`` given ``sigma2_0``.

    ``sigma2_0`` is the variance of the return just before the window; entry ``i`` of
    the output is the variance of ``returns[i]``.
    """
    r2 = np.asarray(returns, float) ** 2
    drive = np.empty_like(r2)
    drive[0] = omega + (arch + garch) * sigma2_0  # E R_0**2 = sigma2_0
    drive[1:] = omega + arch * r2[:-1]
    out, _ = signal.lfilter([1.0], [1.0, -garch], drive[1:], zi=[garch * drive[0]])
    return np.concatenate(([drive[0]], out))


def _neg_loglik(returns: np.ndarray, omega, arch, garch, sigma2_0) -> float:
    s2 = garch_filter(returns, omega, arch, garch, sigma2_0)
    if np.any(s2 <= 0) or not np.all(np.isfinite(s2)):
        return np.inf
    return 0.5 * float(np.sum(np.log(2 * np.pi * s2) + returns**2 / s2))


# Unconstrained coordinates: log omega, logit of the persistence, logit of the arch share.
_BOUND = 30.0
_STARTS = ((0.05, 0.90), (0.10, 0.80), (0.02, 0.97))


def _to_natural(x, scale: float):
    p = float(special.expit(x[1]))
    share = float(special.expit(x[2]))
    return scale * math.exp(x[0]), p * share, p * (1 - share)


def _to_unconstrained(omega, arch, garch, scale):
    p = arch + garch
    return np.array([math.log(omega / scale), special.logit(p), special.logit(arch / p)])


@dataclass(frozen=True)
class GarchFit:
    params: GarchParams
    se: np.ndarray  # standard errors of (omega, arch, garch); nan if the Hessian is singular
    loglik: float
    boundary: bool
    sigma2_0: float
    n: int


def garch_loglik(series: ReturnSeries, window: Interval, params: GarchParams) -> float:
    """Gaussian log-likelihood over ``window`` with the recursion started at its sample variance."""
    r = series.returns[window.start : window.end]
    return -_neg_loglik(r, params.omega, params.arch, params.garch, float(np.mean(r**2)))


def garch_fit(series: ReturnSeries, window: Interval, *, gtol: float = 1e-6) -> GarchFit:
    """Gaussian quasi-maximum likelihood over ``window``.

    Three fixed starting points are optimized with bounded L-BFGS-B in unconstrained
    coordinates; the best converged one wins.
    """
    if window.start < 0 or window.end > len(series):
        raise BoundsError(f"window [{window.start}, {window.end}) outside the series")
    if len(window) < MIN_GARCH_WINDOW:
        raise InsufficientHistoryError(
            f"GARCH fit needs at least {MIN_GARCH_WINDOW} returns, got {len(window)}"
        )
    r = np.asarray(series.returns[window.start : window.end])
    var0 = float(np.mean(r**2))
    if not var0 > 0:
        raise FitError("all returns in the window are zero", last_iterate=None, grad_norm=None)
    n = r.size

    def objective(x):
        return _neg_loglik(r, *_to_natural(x, var0), var0) / n

    bounds = [(-_BOUND, _BOUND)] * 3
    best = None
    for arch0, garch0 in _STARTS:
        x0 = _to_unconstrained(var0 * (1 - arch0 - garch0), arch0, garch0, var0)
        res = optimize.minimize(objective, x0, method="L-BFGS-B", bounds=bounds,
                                options={"gtol": gtol, "maxiter": 500})
        if best is None or res.fun < best.fun:
            best = res
    grad = optimize.approx_fprime(best.x, objective, 1e-7)
    free = np.abs(best.x) < _BOUND - 1e-6
    grad_norm = float(np.linalg.norm(grad[free]))
    if not best.success and grad_norm > 1e-3:
        raise FitError(
            f"GARCH optimizer did not converge: {best.message}",
            last_iterate=_to_natural(best.x, var0),
            grad_norm=grad_norm,
        )
    omega, arch, garch = _to_natural(best.x, var0)
    boundary = bool((~free).any() or min(arch, garch) < 1e-6 or arch + garch > 1 - 1e-6)
    params = GarchParams(omega, arch, garch)
    theta = params.as_array()
    hess = approx_hess3(theta, lambda th: _neg_loglik(r, *th, var0), epsilon=1e-4 * theta)
    try:
        cov = np.linalg.inv(hess)
        se = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    except np.linalg.LinAlgError:
        se = np.full(3, np.nan)
    return GarchFit(params, se, -float(best.fun) * n, boundary, var0, n)


def simulate_garch(params: GarchParams, n: int, seed: int, burn: int = 500) -> ReturnSeries:
    """Gaussian GARCH(1,1) path; the first ``burn`` draws are discarded."""
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(n + burn)
    r = np.empty(n + burn)
    s2 = np.empty(n + burn)
    prev_s2, prev_r2 = params.uncond, params.uncond
    for i in range(n + burn):
        prev_s2 = params.omega + params.arch * prev_r2 + params.garch * prev_s2
        s2[i] = prev_s2
        r[i] = math.sqrt(prev_s2) * eps[i]
        prev_r2 = r[i] ** 2
    return ReturnSeries(r[burn:], true_vol=s2[burn:])


def garch_forecast(params: GarchParams, sigma2_t: float, h: int) -> float:
    """``sigma_bar**2 + (arch + garch)**h (sigma2_t - sigma_bar**2)``."""
    _check_horizon(h)
    if not sigma2_t > 0:
        raise DomainError("sigma2_t must be positive")
    u = params.uncond
    return u + params.persistence**h * (sigma2_t - u)


def garch_aggregated(params: GarchParams, sigma2_t: float, h: int) -> float:
    """Sum of :func:`garch_forecast` over ``1..h`` via the geometric series."""
    _check_horizon(h)
    if not sigma2_t > 0:
        raise DomainError("sigma2_t must be positive")
    p = params.persistence
    geom = p * (1 - p**h) / (1 - p)
    return h * params.uncond + (sigma2_t - params.uncond) * geom


def garch_aggregated_loop(params: GarchParams, sigma2_t: float, h: int) -> float:
    return math.fsum(garch_forecast(params, sigma2_t, k) for k in range(1, h + 1))


def realized_volatility(series: ReturnSeries, t: int, h: int) -> float:
    """``R_{t+1}**2 + ... + R_{t+h}**2``."""
    _check_horizon(h)
    if t < -1 or t + h >= len(series):
        raise BoundsError(f"need returns up to index {t + h}, series has {len(series)}")
    y = series.returns[t + 1 : t + h + 1]
    return float(np.dot(y, y))


def msqe_ratio(lcp_forecasts, garch_forecasts, realized, eval_window: Interval) -> float:
    """``sum |V_lcp - V|**.5 / sum |V_garch - V|**.5`` over ``eval_window``; below 1 favours LCP."""
    a = np.asarray(lcp_forecasts, float)
    g = np.asarray(garch_forecasts, float)
    v = np.asarray(realized, float)
    if not a.shape == g.shape == v.shape or a.ndim != 1:
        raise AlignmentError(f"forecast and realized lengths differ: {a.shape}, {g.shape}, {v.shape}")
    if eval_window.start < 0 or eval_window.end > a.size:
        raise BoundsError(f"window [{eval_window.start}, {eval_window.end}) outside {a.size} forecasts")
    sl = slice(eval_window.start, eval_window.end)
    den = float(np.sum(np.sqrt(np.abs(g[sl] - v[sl]))))
    if den == 0:
        raise DegenerateComparisonError("GARCH forecasts are exact on the window; ratio undefined")
    return float(np.sum(np.sqrt(np.abs(a[sl] - v[sl])))) / den


def innovation_quantile(level: float, law: str, residual_pool=None) -> float:
    """Level quantile of the unit-variance innovation law."""
    if not 0 < level < 1:
        raise DomainError("quantile level must lie in (0, 1)")
    if law == "gaussian":
        return float(stats.norm.ppf(level))
    if law == "student5":
        return float(stats.t.ppf(level, 5) / math.sqrt(5.0 / 3.0))
    if law == "empirical":
        pool = np.asarray([] if residual_pool is None else residual_pool, float)
        if pool.size == 0:
            raise InsufficientHistoryError("empirical quantile needs standardized residuals")
        return float(np.quantile(pool, level, method="linear"))
    raise DomainError(f"unknown innovation law {law!r}; expected one of {VAR_LAWS}")


def var_quantile(sigma2_hat: float, h: int, level: float, law: str, residual_pool=None) -> float:
    """Quantile of the ``h``-step aggregated return, ``sqrt(h sigma2_hat) * q_law(level)``.

    The empirical law uses the one-step quantile of the pool scaled by ``sqrt(h)``.
    """
    _check_horizon(h)
    if not sigma2_hat > 0:
        raise DomainError("sigma2_hat must be positive")
    return math.sqrt(h * sigma2_hat) * innovation_quantile(level, law, residual_pool)


@dataclass(frozen=True)
class VarForecast:
    t: int
    horizon: int
    sigma2: float
    quantile_level: float
    law: str
    var_value: float


@dataclass(frozen=True)
class BacktestReport:
    window: int
    exceptions: int
    frequency: float
    zone: str


def zone(exceptions: int, window: int = 250) -> str:
    """Traffic light: yellow from 5 and red from 10 exceptions per 250 observations."""
    if window < 1 or exceptions < 0:
        raise DomainError("need window >= 1 and a nonnegative exception count")
    if exceptions * 250 >= 10 * window:
        return "red"
    if exceptions * 250 >= 5 * window:
        return "yellow"
    return "green"


@dataclass(frozen=True)
class ScoredForecast:
    forecast: VarForecast
    realized: float
    exception: bool


@dataclass(frozen=True)
class BacktestResult:
    scored: tuple[ScoredForecast, ...]
    windows: dict  # (law, horizon, level) -> tuple[BacktestReport, ...]
    frequency: dict  # (law, horizon, level) -> overall overshoot share


def aggregated_return(series: ReturnSeries, t: int, h: int) -> float:
    if t < -1 or t + h >= len(series):
        raise AlignmentError(f"forecast at t={t} with h={h} runs past the series end")
    return float(np.sum(series.returns[t + 1 : t + h + 1]))


def backtest(series: ReturnSeries, forecasts: Sequence[VarForecast], window: int = 250,
             overlapping: bool = True) -> BacktestResult:
    """Score VaR forecasts against realized aggregated returns.

    An exception is a realized return strictly below the VaR value.  Within every
    (law, horizon, level) cell the forecasts are cut into consecutive blocks of
    ``window`` and each full block gets a zone.  With ``overlapping=False`` only every
    ``h``-th origin of a cell is scored.
    """
    cells: dict[tuple, list[ScoredForecast]] = {}
    scored = []
    for f in forecasts:
        realized = aggregated_return(series, f.t, f.horizon)
        item = ScoredForecast(f, realized, bool(realized < f.var_value))
        key = (f.law, f.horizon, f.quantile_level)
        cell = cells.setdefault(key, [])
        if not overlapping and cell and f.t - cell[-1].forecast.t < f.horizon:
            continue
        cell.append(item)
        scored.append(item)
    windows = {}
    frequency = {}
    for key, items in cells.items():
        flags = np.array([s.exception for s in items], bool)
        frequency[key] = float(flags.mean())
        reports = []
        for lo in range(0, flags.size - window + 1, window):
            k = int(flags[lo : lo + window].sum())
            reports.append(BacktestReport(window, k, k / window, zone(k, window)))
        windows[key] = tuple(reports)
    return BacktestResult(tuple(scored), windows, frequency)


@dataclass(frozen=True)
class ResidualDiagnostics:
    residuals: np.ndarray
    acf_abs: np.ndarray  # lags 0..max_lag; nan when |residuals| has zero variance
    band: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    degenerate: bool

    @property
    def share_inside_band(self) -> float:
        if self.degenerate:
            return float("nan")
        return float(np.mean(np.abs(self.acf_abs[1:]) <= self.band))


def residual_diagnostics(series: ReturnSeries, sigma2_hats, max_lag: int = 50,
                         bins: int = 50) -> ResidualDiagnostics:
    """Standardized returns ``R_t / sigma_t`` with the ACF of their absolute values."""
    s2 = np.asarray(sigma2_hats, float)
    if s2.shape != (len(series),):
        raise AlignmentError(f"{s2.size} variances for {len(series)} returns")
    if not np.all(s2 > 0):
        raise DomainError("variance estimates must be positive")
    xi = series.returns / np.sqrt(s2)
    a = np.abs(xi)
    band = 1.96 / math.sqrt(xi.size)
    degenerate = bool(np.var(a) == 0)
    if degenerate:
        rho = np.full(max_lag + 1, np.nan)
    else:
        rho = acf(a, nlags=max_lag, fft=True)
    counts, edges = np.histogram(xi, bins=bins)
    return ResidualDiagnostics(xi, rho, band, counts, edges, degenerate)


def lcp_origin_estimates(series: ReturnSeries, scheme: IntervalScheme, crits: CriticalValues,
                         origins: Sequence[int]) -> np.ndarray:
    """Adaptive variance estimate at each forecast origin (nan where it failed)."""
    results = rolling_estimate(series, scheme, crits, [t + 1 for t in origins])
    return np.array([r.theta_hat if isinstance(r, LcpResult) else np.nan for r in results])


@dataclass(frozen=True)
class ForecastComparison:
    origins: np.ndarray
    horizons: tuple[int, ...]
    lcp: dict  # h -> aggregated variance forecasts
    garch: dict
    realized: dict
    periods: tuple[Interval, ...]  # positions into origins
    ratios: dict  # h -> tuple of MSqE ratios per period


def compare_forecasts(series: ReturnSeries, scheme: IntervalScheme, crits: CriticalValues,
                      horizons=(1, 5, 10), presample: int = 500, garch_window: int = 1000,
                      period: int = 250, refit_every: int = 1) -> ForecastComparison:
    """Adaptive and scrolling GARCH variance forecasts scored on consecutive periods."""
    hmax = max(horizons)
    first = max(presample, MIN_GARCH_WINDOW) - 1
    origins = np.arange(first, len(series) - hmax)
    if origins.size == 0:
        raise InsufficientHistoryError("series too short for the presample and the horizons")
    theta = lcp_origin_estimates(series, scheme, crits, origins)
    fit = None
    s2_t = np.empty(origins.size)
    fits = []
    for i, t in enumerate(origins):
        lo = max(0, t + 1 - garch_window)
        if fit is None or i % refit_every == 0:
            fit = garch_fit(series, Interval(lo, t + 1))
        p = fit.params
        s2 = garch_filter(series.returns[lo : t + 1], p.omega, p.arch, p.garch,
                          float(np.mean(series.returns[lo : t + 1] ** 2)))
        s2_t[i] = s2[-1]
        fits.append(p)
    lcp, garch, realized, ratios = {}, {}, {}, {}
    periods = tuple(Interval(lo, lo + period) for lo in range(0, origins.size - period + 1, period))
    for h in horizons:
        lcp[h] = h * theta
        garch[h] = np.array([garch_aggregated(p, s, h) for p, s in zip(fits, s2_t)])
        realized[h] = np.array([realized_volatility(series, int(t), h) for t in origins])
        ratios[h] = tuple(msqe_ratio(lcp[h], garch[h], realized[h], w) for w in periods)
    return ForecastComparison(origins, tuple(horizons), lcp, garch, realized, periods, ratios)


def var_forecasts(series: ReturnSeries, scheme: IntervalScheme, crits: CriticalValues,
                  horizons=(1, 5, 10), levels=(0.01, 0.05), laws=VAR_LAWS,
                  presample: int = 500) -> list[VarForecast]:
    """VaR forecasts from the adaptive estimate for every origin after the presample.

    The empirical law draws on standardized returns ``R_s / sigma_hat_s`` for every
    ``s`` up to the origin whose estimate was available.
    """
    hmax = max(horizons)
    first = max(presample, scheme.lengths[0] + scheme.lengths[1]) - 1
    origins = np.arange(first, len(series) - hmax)
    if origins.size == 0:
        raise InsufficientHistoryError("series too short for the presample and the horizons")
    all_t = np.arange(scheme.lengths[0] + scheme.lengths[1] - 1, len(series))
    # estimate for R_s made before seeing it: origin s - 1
    est = lcp_origin_estimates(series, scheme, crits, all_t)
    prior = dict(zip(all_t.tolist(), est))
    xi = np.full(len(series), np.nan)
    for s in range(len(series)):
        th = prior.get(s - 1, np.nan)
        if th > 0:
            xi[s] = series.returns[s] / math.sqrt(th)
    out = []
    for t in origins:
        sigma2 = prior[int(t)]
        if not sigma2 > 0:
            continue
        pool = xi[: t + 1]
        pool = pool[np.isfinite(pool)]
        for law in laws:
            for level in levels:
                q = innovation_quantile(level, law, pool if law == "empirical" else None)
                for h in horizons:
                    out.append(VarForecast(int(t), h, float(sigma2), level, law,
                                           math.sqrt(h * sigma2) * q))
    return out
