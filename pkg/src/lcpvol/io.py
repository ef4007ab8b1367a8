"""CSV ingestion and export, run configuration files and output headers."""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lcpvol import __version__
from lcpvol.core import ReturnSeries
from lcpvol.errors import ConfigError, DataValidationError, IngestionError
from lcpvol.procedure import IntervalScheme, build_scheme

KINDS = ("prices", "returns")


def fmt(x: float) -> str:
    """Shortest decimal that reads back to the same double (at most 17 digits)."""
    return repr(float(x))


def ingest_csv(path, kind: str) -> ReturnSeries:
    """Read a ``date,value`` file with a header row.

    Dates must be ISO calendar dates in strictly increasing order; they map to
    consecutive integer time points.  Prices become log-returns, which drops the first
    date.
    """
    if kind not in KINDS:
        raise IngestionError(f"kind must be one of {KINDS}, got {kind!r}")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise IngestionError(f"cannot read {p}: {exc.strerror}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise IngestionError(f"{p} is empty")
    if len(rows[0]) != 2:
        raise IngestionError("header must have exactly two columns (date, value)", line=1)
    dates: list[dt.date] = []
    values: list[float] = []
    seen: dict[dt.date, int] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise IngestionError(f"expected 2 columns, got {len(row)}", line=lineno)
        try:
            day = dt.date.fromisoformat(row[0].strip())
        except ValueError:
            raise IngestionError(f"unparseable date {row[0]!r}", line=lineno) from None
        try:
            value = float(row[1])
        except ValueError:
            raise IngestionError(f"unparseable value {row[1]!r}", line=lineno) from None
        if not math.isfinite(value):
            raise IngestionError(f"non-finite value {row[1]!r}", line=lineno)
        if kind == "prices" and not value > 0:
            raise IngestionError(f"non-positive price {value!r}", line=lineno)
        if day in seen:
            raise IngestionError(f"duplicate date {day} (first on line {seen[day]})", line=lineno)
        if dates and day < dates[-1]:
            raise IngestionError(f"date {day} is earlier than the previous row", line=lineno)
        seen[day] = lineno
        dates.append(day)
        values.append(value)
    if kind == "prices":
        if len(values) < 2:
            raise IngestionError("need at least two prices")
        v = np.asarray(values)
        return ReturnSeries(np.log(v[1:] / v[:-1]), dates=tuple(dates[1:]))
    if not values:
        raise IngestionError("no data rows")
    return ReturnSeries(np.asarray(values), dates=tuple(dates))


def export_csv(path, series: ReturnSeries) -> None:
    """Write returns as ``date,value``; :func:`ingest_csv` reads them back bit-exactly."""
    if series.dates is None:
        raise DataValidationError("export needs calendar dates on the series")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "value"])
        for day, v in zip(series.dates, series.returns):
            w.writerow([day.isoformat(), fmt(v)])


def synthetic_dates(n: int, start: dt.date = dt.date(2000, 1, 3)) -> tuple[dt.date, ...]:
    """Consecutive business days, for labelling simulated series."""
    days = np.busday_offset(np.datetime64(start), np.arange(n), roll="forward")
    return tuple(d.astype(dt.date) for d in days)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _strs(s: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by every command.

    ``scheme`` is ``published``, ``generated`` (from ``n0``, ``growth``, ``k_max``) or an
    explicit comma-separated list of lengths ending with the testing-only length.
    """

    scheme: str = "published"
    n0: int = 5
    growth: float = 1.25
    k_max: int = 12
    r: float = 0.5
    alpha: float = 0.2
    replicates: int = 10_000
    seed: int = 0
    z_grid_step: float = 0.05
    horizons: tuple[int, ...] = (1, 5, 10)
    levels: tuple[float, ...] = (0.01, 0.05)
    laws: tuple[str, ...] = ("gaussian", "student5", "empirical")
    presample: int = 500
    garch_window: int = 1000
    refit_every: int = 1
    period: int = 250
    overlapping: bool = True
    magnitudes: tuple[float, ...] = (3.0, 2.0, 1.75)
    sim_laws: tuple[str, ...] = ("gaussian", "student5")
    sim_replicates: int = 1000
    segment_length: int = 150
    input: tuple[str, ...] = ()
    kind: str = "prices"
    crits: str = ""
    output: str = ""
    table: str = ""

    def build_scheme(self) -> IntervalScheme:
        if self.scheme == "published":
            return IntervalScheme.published()
        if self.scheme == "generated":
            return build_scheme(self.n0, self.growth, self.k_max)
        try:
            lengths = _ints(self.scheme)
        except ValueError:
            raise ConfigError(f"scheme must be published, generated or a length list, got {self.scheme!r}") from None
        return IntervalScheme.from_lengths(lengths)

    def fingerprint(self) -> str:
        """Hash of every setting except the output destinations."""
        neutral = dataclasses.replace(self, output="", table="")
        return hashlib.sha256(format_config(neutral).encode()).hexdigest()[:16]


_PARSERS = {
    int: int,
    float: float,
    str: str.strip,
    bool: _bool,
    tuple[int, ...]: _ints,
    tuple[float, ...]: _floats,
    tuple[str, ...]: _strs,
}
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _field_type(name: str):
    hints = {"int": int, "float": float, "str": str, "bool": bool,
             "tuple[int, ...]": tuple[int, ...], "tuple[float, ...]": tuple[float, ...],
             "tuple[str, ...]": tuple[str, ...]}
    return hints[_FIELDS[name].type]


def apply_settings(config: RunConfig, items, source: str = "override") -> RunConfig:
    """Return ``config`` updated from ``(lineno, key, value)`` triples; unknown keys fail."""
    changes = {}
    for lineno, key, value in items:
        where = f"{source} line {lineno}" if lineno else source
        if key not in _FIELDS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            changes[key] = _PARSERS[_field_type(key)](value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
    return dataclasses.replace(config, **changes)


def _split_line(raw: str, where: str):
    key, sep, value = raw.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"{where}: expected key=value, got {raw!r}")
    return key.strip(), value.strip()


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    items = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, value = _split_line(line, f"config line {lineno}")
        items.append((lineno, key, value))
    return apply_settings(base or RunConfig(), items, "config")


def parse_overrides(pairs) -> list[tuple[int, str, str]]:
    return [(0, *_split_line(p, "override")) for p in pairs]


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return fmt(value)
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    return str(value)


def format_config(config: RunConfig) -> str:
    return "".join(f"{f}={_render(getattr(config, f))}\n" for f in _FIELDS)


def read_config(path) -> RunConfig:
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc


def header_line(config: RunConfig) -> str:
    return f"# lcpvol {__version__} seed={config.seed} config={config.fingerprint()}"


def write_table(path, header: str, columns, rows) -> None:
    """Comment header, a column line, then comma-separated rows; floats keep full precision."""
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
