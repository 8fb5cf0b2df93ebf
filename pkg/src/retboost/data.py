"""CSV ingestion and synthetic AR(1) price series."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .series import PriceSeries

DATE_ALIASES = ("date", "trading_date", "time", "timestamp")
CLOSE_ALIASES = ("close", "closing_price", "adj_close", "adjusted_close", "close_price")


class IngestError(ValueError):
    """Raised with one line per offending row."""

    def __init__(self, problems):
        self.problems = list(problems)
        shown = "\n".join(self.problems[:20])
        more = f"\n... and {len(self.problems) - 20} more" if len(self.problems) > 20 else ""
        super().__init__(f"{len(self.problems)} invalid row(s):\n{shown}{more}")


def _find_column(header, wanted, aliases):
    lowered = [h.strip().lower() for h in header]
    names = [wanted.lower()] if wanted else [a for a in aliases]
    for name in names:
        if name in lowered:
            return lowered.index(name)
    raise IngestError([f"header: no column matching {names} in {header}"])


def _parse_date(text: str, fmt: str | None):
    text = text.strip()
    if fmt:
        return datetime.strptime(text, fmt).date()
    try:
        return datetime.fromisoformat(text[:10]).date()
    except ValueError:
        return datetime.strptime(text, "%d/%m/%Y").date()


def ingest_csv(path, date_column: str | None = None, close_column: str | None = None,
               date_format: str | None = None) -> PriceSeries:
    """Read a (date, close) series from a CSV with a header row.

    Column names match case-insensitively; other columns are ignored. Dates
    are ISO (``YYYY-MM-DD``) or ``d/m/Y`` unless ``date_format`` is given.
    Thousands separators in closes are stripped. Rows are sorted by date.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(["file is empty"]) from None
        di = _find_column(header, date_column, DATE_ALIASES)
        ci = _find_column(header, close_column, CLOSE_ALIASES)
        dates, closes, problems = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                d = _parse_date(row[di], date_format)
            except (ValueError, IndexError):
                problems.append(f"line {lineno}: unparseable date {row[di] if di < len(row) else ''!r}")
                continue
            try:
                c = float(row[ci].replace(",", "").strip())
            except (ValueError, IndexError):
                problems.append(f"line {lineno}: unparseable close {row[ci] if ci < len(row) else ''!r}")
                continue
            if not (math.isfinite(c) and c > 0):
                problems.append(f"line {lineno}: close must be positive and finite, got {c!r}")
                continue
            dates.append((d, lineno))
            closes.append(c)
    order = sorted(range(len(dates)), key=lambda i: dates[i][0])
    seen = {}
    for i in order:
        d, lineno = dates[i]
        if d in seen:
            problems.append(f"line {lineno}: duplicate date {d.isoformat()} (first on line {seen[d]})")
        else:
            seen[d] = lineno
    if problems:
        raise IngestError(problems)
    if not order:
        raise IngestError(["no data rows"])
    return PriceSeries(
        dates=np.array([dates[i][0] for i in order], dtype="datetime64[D]"),
        closes=np.array([closes[i] for i in order]),
    )


def write_prices_csv(prices: PriceSeries, path) -> None:
    """Write ``date,close`` with ISO dates and round-trip float formatting."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "close"])
        for d, c in zip(prices.dates, prices.closes):
            w.writerow([str(d), repr(float(c))])


def fingerprint_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class SyntheticSpec:
    """AR(1) log-returns ``r_t = phi * r_{t-1} + sigma_t * eps_t``.

    ``regimes`` is an optional tuple of ``(start_index, multiplier)`` pairs
    scaling ``sigma`` from that return index onward.
    """

    n: int = 3000
    ar_coeff: float = 0.3
    noise_sd: float = 0.01
    regimes: tuple = field(default_factory=tuple)
    seed: int = 42
    initial_price: float = 1000.0
    start_date: str = "2000-01-03"

    def __post_init__(self):
        if not abs(self.ar_coeff) < 1:
            raise ValueError("|ar_coeff| must be < 1")
        if not self.noise_sd > 0:
            raise ValueError("noise_sd must be > 0")
        if self.n < 500:
            raise ValueError("n must be >= 500")
        if not self.initial_price > 0:
            raise ValueError("initial_price must be > 0")
        object.__setattr__(self, "regimes", tuple(tuple(r) for r in self.regimes))


def synthetic_returns(spec: SyntheticSpec) -> np.ndarray:
    """The ``n - 1`` log-returns behind ``generate_synthetic(spec)``."""
    rng = np.random.default_rng(spec.seed)
    m = spec.n - 1
    sigma = np.full(m, spec.noise_sd)
    for start, mult in sorted(spec.regimes):
        sigma[int(start):] = spec.noise_sd * mult
    eps = rng.standard_normal(m)
    r = np.empty(m)
    # stationary start
    r[0] = sigma[0] * eps[0] / math.sqrt(1 - spec.ar_coeff**2)
    for t in range(1, m):
        r[t] = spec.ar_coeff * r[t - 1] + sigma[t] * eps[t]
    return r


def generate_synthetic(spec: SyntheticSpec) -> PriceSeries:
    r = synthetic_returns(spec)
    closes = spec.initial_price * np.exp(np.r_[0.0, np.cumsum(r)])
    dates = np.busday_offset(np.datetime64(spec.start_date, "D"), np.arange(spec.n), roll="forward")
    return PriceSeries(dates=dates, closes=closes)
