"""Price ingestion, horizon resampling, return/sign series and synthetic data."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

HEADER = ("date", "ticker", "close")
SYNTHETIC_START = np.datetime64("2000-01-03")


class DataError(ValueError):
    pass


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PriceSeries:
    asset_id: str
    dates: np.ndarray
    prices: np.ndarray
    horizon: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dates", _frozen(self.dates, "datetime64[D]"))
        object.__setattr__(self, "prices", _frozen(self.prices, np.float64))
        if len(self.dates) != len(self.prices):
            raise DataError(f"{self.asset_id}: dates and prices differ in length")
        if len(self.dates) > 1 and not np.all(np.diff(self.dates) > np.timedelta64(0, "D")):
            raise DataError(f"{self.asset_id}: dates must be strictly increasing")
        if not np.all(np.isfinite(self.prices)) or np.any(self.prices <= 0):
            raise DataError(f"{self.asset_id}: prices must be finite and positive")

    def __len__(self) -> int:
        return len(self.prices)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PriceSeries):
            return NotImplemented
        return (
            self.asset_id == other.asset_id
            and self.horizon == other.horizon
            and np.array_equal(self.dates, other.dates)
            and np.array_equal(self.prices, other.prices)
        )


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    """Simple returns between consecutive observations of a (resampled) series.

    ``dates`` holds the price dates, one more than there are returns; return
    ``t`` runs from ``dates[t]`` to ``dates[t + 1]``.
    """

    asset_id: str
    horizon: int
    simple_returns: np.ndarray
    dates: np.ndarray | None = None
    signs: np.ndarray = field(init=False)

    def __post_init__(self):
        r = _frozen(self.simple_returns, np.float64)
        object.__setattr__(self, "simple_returns", r)
        object.__setattr__(self, "signs", _frozen(r > 0, np.uint8))
        if self.dates is not None:
            object.__setattr__(self, "dates", _frozen(self.dates, "datetime64[D]"))
            if len(self.dates) != len(r) + 1:
                raise DataError("dates must have one more entry than returns")

    def __len__(self) -> int:
        return len(self.simple_returns)


def load_prices(source: TextIO | str) -> dict[str, PriceSeries]:
    """Read long-format ``date,ticker,close`` rows into aligned series.

    Tickers missing any date present in the file are dropped with a warning,
    so every returned series shares one date grid. Keys are sorted by ticker.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None:
        return {}
    header = [h.strip() for h in header]
    if sorted(header) != sorted(HEADER):
        raise DataError(f"line 1: expected header {','.join(HEADER)}, got {','.join(header)}")
    col = {name: header.index(name) for name in HEADER}

    rows: dict[str, dict[np.datetime64, float]] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(HEADER):
            raise DataError(f"line {line_no}: expected {len(HEADER)} fields, got {len(row)}")
        ticker = row[col["ticker"]].strip()
        if not ticker:
            raise DataError(f"line {line_no}: empty ticker")
        try:
            date = np.datetime64(row[col["date"]].strip(), "D")
        except ValueError:
            raise DataError(f"line {line_no}: bad date {row[col['date']]!r}") from None
        try:
            close = float(row[col["close"]])
        except ValueError:
            raise DataError(f"line {line_no}: bad close {row[col['close']]!r}") from None
        if not math.isfinite(close) or close <= 0:
            raise DataError(f"line {line_no}: non-positive price {close} for {ticker}")
        per_ticker = rows.setdefault(ticker, {})
        if date in per_ticker:
            raise DataError(f"line {line_no}: duplicate row for ({date}, {ticker})")
        per_ticker[date] = close

    if not rows:
        return {}
    all_dates = np.array(sorted(set().union(*rows.values())), dtype="datetime64[D]")
    out = {}
    for ticker in sorted(rows):
        obs = rows[ticker]
        if len(obs) != len(all_dates):
            warnings.warn(
                f"dropping {ticker}: {len(all_dates) - len(obs)} of {len(all_dates)} dates missing",
                stacklevel=2,
            )
            continue
        out[ticker] = PriceSeries(ticker, all_dates, [obs[d] for d in all_dates])
    return out


def read_prices(path) -> dict[str, PriceSeries]:
    with open(path, newline="", encoding="utf-8") as fh:
        return load_prices(fh)


def write_prices(series: Iterable[PriceSeries], fh: TextIO) -> None:
    """Write series in the long ``date,ticker,close`` format read by :func:`load_prices`."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(HEADER)
    for s in series:
        for d, p in zip(s.dates, s.prices):
            writer.writerow([str(d), s.asset_id, repr(float(p))])


def resample(series: PriceSeries, horizon: int) -> PriceSeries:
    """Keep every ``horizon``-th observation starting at index 0."""
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    if horizon == 1:
        return series
    if len(series) <= horizon:
        raise DataError(
            f"{series.asset_id}: series of length {len(series)} too short for horizon {horizon}"
        )
    return PriceSeries(
        series.asset_id,
        series.dates[::horizon],
        series.prices[::horizon],
        horizon=series.horizon * horizon,
    )


def to_returns(series: PriceSeries) -> ReturnSeries:
    if len(series) < 2:
        raise DataError(f"{series.asset_id}: need at least 2 prices for returns")
    p = series.prices
    return ReturnSeries(
        series.asset_id, series.horizon, p[1:] / p[:-1] - 1.0, dates=series.dates
    )


SYNTHETIC_KINDS = ("iid_coin", "trend", "periodic", "gbm")


def _primitive_pattern(p: int, rng: np.random.Generator) -> np.ndarray:
    # a word with no shorter period, so its p rotations are all distinct
    if p == 1:
        return np.ones(1, dtype=np.uint8)
    while True:
        word = rng.integers(0, 2, size=p, dtype=np.uint8)
        if all(not np.array_equal(word, np.roll(word, d)) for d in range(1, p) if p % d == 0):
            return word


def synthetic_series(
    kind: str,
    length: int,
    seed: int = 0,
    *,
    period: int | None = None,
    mu: float = 0.0003,
    sigma: float = 0.02,
    asset_id: str | None = None,
    start_price: float = 100.0,
) -> PriceSeries:
    """Deterministic synthetic price path on a business-day calendar.

    ``iid_coin``: fair +-1% moves. ``trend``: strictly rising prices.
    ``periodic``: a sign word of length ``period`` (no shorter period) repeated,
    realized as +-1% moves. ``gbm``: log-normal steps with drift ``mu`` and
    volatility ``sigma`` per step.
    """
    if length < 2:
        raise DataError("length must be >= 2")
    rng = np.random.default_rng(seed)
    n = length - 1
    if kind == "iid_coin":
        signs = rng.integers(0, 2, size=n)
        growth = np.where(signs == 1, 1.01, 0.99)
    elif kind == "trend":
        growth = 1.0 + rng.uniform(0.001, 0.01, size=n)
    elif kind == "periodic":
        if period is None or period < 1:
            raise DataError("periodic series needs period >= 1")
        word = _primitive_pattern(period, rng)
        growth = np.where(np.resize(word, n) == 1, 1.01, 0.99)
    elif kind == "gbm":
        if sigma < 0:
            raise DataError("sigma must be >= 0")
        growth = np.exp(mu - 0.5 * sigma**2 + sigma * rng.standard_normal(n))
    else:
        raise DataError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    prices = start_price * np.concatenate([[1.0], np.cumprod(growth)])
    dates = np.busday_offset(SYNTHETIC_START, np.arange(length), roll="forward")
    return PriceSeries(asset_id or f"SYN{seed}", dates, prices)


def parse_kind(text: str) -> tuple[str, dict]:
    """Parse ``periodic:4`` / ``gbm:0.0003:0.02`` style kind strings."""
    name, *args = text.split(":")
    if name == "periodic":
        if len(args) != 1:
            raise DataError("periodic needs a period, e.g. periodic:4")
        return name, {"period": int(args[0])}
    if name == "gbm":
        if len(args) not in (0, 2):
            raise DataError("gbm takes mu and sigma, e.g. gbm:0.0003:0.02")
        return name, ({"mu": float(args[0]), "sigma": float(args[1])} if args else {})
    if name in SYNTHETIC_KINDS and not args:
        return name, {}
    raise DataError(f"unknown synthetic kind {text!r}")
