"""Monte Carlo calibration of the per-scale critical values.

Under a constant variance the test statistics do not depend on its value, so every
simulation runs with unit variance.  Critical values are fixed one scale at a time:
``z_l`` is the smallest grid value for which the false alarms first raised at scale
``l`` cost at most ``alpha * r_r / K`` in the loss ``|N_k K(theta_k, theta_{l-1})|**r``
at every later scale ``k``.  All candidate values reuse the same simulated paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lcpvol.core import kl, risk_constant
from lcpvol.errors import CalibrationError, ConfigError, DomainError
from lcpvol.procedure import (
    CalibProvenance,
    CriticalValues,
    IntervalScheme,
    ScanResult,
    scan_windows,
    window_cumsums,
)


@dataclass(frozen=True)
class CalibConfig:
    r: float = 0.5
    alpha: float = 0.2
    replicates: int = 10_000
    seed: int = 0
    scheme: IntervalScheme = field(default_factory=IntervalScheme.published)
    z_grid_step: float = 0.05
    a0: float = 1.0
    chunk_size: int = 5_000

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError("r must be positive")
        if not 0 < self.alpha <= 1:
            raise DomainError("alpha must lie in (0, 1]")
        if self.replicates < 1000:
            raise DomainError("calibration needs at least 1000 replicates")
        if not self.z_grid_step > 0:
            raise DomainError("z_grid_step must be positive")
        if not self.a0 > 0:
            raise DomainError("a0 must be positive")

    @property
    def budget(self) -> float:
        """Per-scale share ``alpha * r_r / K`` of the propagation risk."""
        return self.alpha * risk_constant(self.r) / self.scheme.n_scales


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Independent stream determined by ``(seed, replicate)`` alone."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate,)))


def simulate_null_paths(scheme: IntervalScheme, replicates: range, seed: int,
                        theta_star: float = 1.0) -> np.ndarray:
    """Homogeneous Gaussian paths of length ``N_{K+1}``, one row per replicate."""
    M = scheme.window
    out = np.empty((len(replicates), M))
    for row, i in enumerate(replicates):
        out[row] = replicate_rng(seed, i).standard_normal(M)
    return out * math.sqrt(theta_star)


def null_scan(scheme: IntervalScheme, replicates: int, seed: int, theta_star: float = 1.0,
              chunk_size: int = 5_000) -> ScanResult:
    """Scan statistics of ``replicates`` null paths; chunking does not change the result."""
    parts = []
    for lo in range(0, replicates, chunk_size):
        paths = simulate_null_paths(scheme, range(lo, min(lo + chunk_size, replicates)), seed,
                                    theta_star)
        parts.append(scan_windows(window_cumsums(paths**2), scheme))
    return ScanResult(
        np.concatenate([p.theta_tilde for p in parts]),
        np.concatenate([p.stats for p in parts]),
        np.concatenate([p.tau_offset for p in parts]),
    )


def cap_formula(n_k: float, n_K: float, K: int, r: float, alpha: float, a0: float) -> float:
    """``a0 log K + 2 log(N_k / alpha) + 2 r log(N_K / N_k)``."""
    return a0 * math.log(K) + 2 * math.log(n_k / alpha) + 2 * r * math.log(n_K / n_k)


def theoretical_cap(scheme: IntervalScheme, r: float, alpha: float, a0: float) -> list[float]:
    """Upper-bound critical values for scales ``1..K``; used to cap the grid search only."""
    if not a0 > 0:
        raise DomainError("a0 must be positive")
    if not r > 0 or not 0 < alpha <= 1:
        raise DomainError("need r > 0 and alpha in (0, 1]")
    K = scheme.n_scales
    n = scheme.lengths
    return [cap_formula(n[k], n[K], K, r, alpha, a0) for k in range(1, K + 1)]


def _false_alarm_losses(scan: ScanResult, scheme: IntervalScheme, l: int, r: float) -> np.ndarray:
    """``|N_k K(theta_k, theta_{l-1})|**r`` for ``k = l..K``, shape ``(R, K - l + 1)``."""
    K = scheme.n_scales
    n = np.asarray(scheme.lengths[l : K + 1], float)
    tt = scan.theta_tilde
    return (n * kl(tt[:, l : K + 1], tt[:, l - 1 : l])) ** r


@dataclass(frozen=True)
class CalibrationReport:
    crits: CriticalValues
    achieved_risk: tuple[float, ...]
    caps: tuple[float, ...]
    budget: float


def calibrate_detail(config: CalibConfig, theta_star: float = 1.0) -> CalibrationReport:
    scheme = config.scheme
    K = scheme.n_scales
    budget = config.budget
    caps = theoretical_cap(scheme, config.r, config.alpha, config.a0)
    scan = null_scan(scheme, config.replicates, config.seed, theta_star, config.chunk_size)
    R = config.replicates
    active = np.ones(R, bool)
    z = []
    achieved = []
    for l in range(1, K + 1):
        stat = scan.stats[:, l - 1]
        losses = _false_alarm_losses(scan, scheme, l, config.r) * active[:, None]
        order = np.argsort(stat, kind="stable")
        sorted_stat = stat[order]
        # tail[i] = sum of losses over paths with rank >= i in the sorted statistics
        tail = np.vstack((np.cumsum(losses[order][::-1], axis=0)[::-1], np.zeros((1, K - l + 1))))
        steps = int(math.floor(caps[l - 1] / config.z_grid_step))
        grid = caps[l - 1] - config.z_grid_step * np.arange(steps + 1)
        grid = grid[grid > 0][::-1]  # ascending
        first_above = np.searchsorted(sorted_stat, grid, side="right")
        risk = tail[first_above].max(axis=1) / R
        feasible = risk <= budget
        if not feasible[-1]:
            raise CalibrationError(
                f"scale {l}: risk {risk[-1]:.6g} exceeds budget {budget:.6g} at the cap "
                f"z={grid[-1]:.6g}",
                scale=l,
                achieved_risk=float(risk[-1]),
                budget=budget,
            )
        # risk is nonincreasing in z, so everything above the last infeasible point passes
        infeasible = np.flatnonzero(~feasible)
        pick = 0 if infeasible.size == 0 else int(infeasible[-1]) + 1
        z.append(float(grid[pick]))
        achieved.append(float(risk[pick]))
        active &= stat <= z[-1]
    provenance = CalibProvenance(config.r, config.alpha, R, config.seed, scheme.lengths)
    return CalibrationReport(CriticalValues(tuple(z), provenance), tuple(achieved), tuple(caps),
                             budget)


def calibrate(config: CalibConfig, theta_star: float = 1.0) -> CriticalValues:
    """Critical values meeting the propagation budget for ``config.scheme``."""
    return calibrate_detail(config, theta_star).crits


@dataclass(frozen=True)
class ScaleRisk:
    k: int
    risk: float
    se: float
    bound: float
    false_alarm: float
    passed: bool


@dataclass(frozen=True)
class PropagationReport:
    scales: tuple[ScaleRisk, ...]
    decomposition_mismatches: int
    replicates: int
    seed: int

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.scales)


def propagation_losses(scan: ScanResult, z, scheme: IntervalScheme, r: float):
    """Per-path losses ``|N_k K(theta_k, theta_hat_k)|**r`` for ``k = 1..K``.

    Returns the losses, the same losses rebuilt from the first-rejection decomposition,
    and the false alarm indicators.
    """
    K = scheme.n_scales
    kappa = scan.kappa(z)
    path = scan.theta_hat_path(kappa)
    tt = scan.theta_tilde
    n = np.asarray(scheme.lengths[1 : K + 1], float)
    direct = (n * kl(tt[:, 1 : K + 1], path[:, 1 : K + 1])) ** r
    rebuilt = np.zeros_like(direct)
    for l in range(1, K + 1):
        first_reject_here = kappa == l - 1
        term = (n[l - 1 :] * kl(tt[:, l : K + 1], tt[:, l - 1 : l])) ** r
        rebuilt[:, l - 1 :] += np.where(first_reject_here[:, None], term, 0.0)
    alarm = kappa[:, None] < np.arange(1, K + 1)
    return direct, rebuilt, alarm


def verify_propagation(crits: CriticalValues, config: CalibConfig, fresh_seed: int,
                       replicates: int | None = None, slack_se: float = 3.0) -> PropagationReport:
    """Out-of-sample Monte Carlo check of ``E|N_k K(theta_k, theta_hat_k)|**r <= alpha r_r``."""
    if fresh_seed == config.seed:
        raise ConfigError("verification needs a seed different from the calibration seed")
    scheme = config.scheme
    crits.check(scheme)
    R = config.replicates if replicates is None else replicates
    scan = null_scan(scheme, R, fresh_seed, chunk_size=config.chunk_size)
    direct, rebuilt, alarm = propagation_losses(scan, crits.array(), scheme, config.r)
    bound = config.alpha * risk_constant(config.r)
    mean = direct.mean(axis=0)
    se = direct.std(axis=0, ddof=1) / math.sqrt(R)
    scales = tuple(
        ScaleRisk(k + 1, float(mean[k]), float(se[k]), bound, float(alarm[:, k].mean()),
                  bool(mean[k] <= bound + slack_se * se[k]))
        for k in range(scheme.n_scales)
    )
    mismatches = int(np.count_nonzero(~np.isclose(direct, rebuilt, rtol=1e-12, atol=0.0)))
    return PropagationReport(scales, mismatches, R, fresh_seed)


_HEADER_KEYS = ("r", "alpha", "replicates", "seed", "scheme")


def format_critical_values(crits: CriticalValues, header: str | None = None) -> str:
    prov = crits.calib_config
    if prov is None:
        raise ConfigError("critical values without calibration provenance cannot be written")
    lines = [] if header is None else [header]
    lines += [
        f"r={prov.r!r}",
        f"alpha={prov.alpha!r}",
        f"replicates={prov.replicates}",
        f"seed={prov.seed}",
        "scheme=" + ",".join(map(str, prov.scheme)),
    ]
    lines += [f"z_{k}={v:.17g}" for k, v in enumerate(crits.z, start=1)]
    return "\n".join(lines) + "\n"


def write_critical_values(path, crits: CriticalValues, header: str | None = None) -> None:
    Path(path).write_text(format_critical_values(crits, header))


def parse_critical_values(text: str) -> CriticalValues:
    fields: dict[str, str] = {}
    z: dict[int, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key = key.strip()
        value = value.strip()
        if key.startswith("z_"):
            z[int(key[2:])] = float(value)
        elif key in _HEADER_KEYS:
            fields[key] = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise ConfigError(f"critical value file lacks {', '.join(missing)}")
    if sorted(z) != list(range(1, len(z) + 1)):
        raise ConfigError(f"critical values must be numbered z_1..z_K, got {sorted(z)}")
    prov = CalibProvenance(
        float(fields["r"]),
        float(fields["alpha"]),
        int(fields["replicates"]),
        int(fields["seed"]),
        tuple(int(v) for v in fields["scheme"].split(",")),
    )
    return CriticalValues(tuple(z[k] for k in sorted(z)), prov)


def read_critical_values(path) -> CriticalValues:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read critical values {path}: {exc.strerror}") from exc
    return parse_critical_values(text)
