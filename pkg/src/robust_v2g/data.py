"""Time-series ingestion and synthetic data.

Days are UTC days.  Tariff peak windows and driving windows are defined in
local time and converted to UTC trading intervals with ``zoneinfo``.
Frequency samples arrive at a nominal 10 s spacing; gaps of up to 60 s are
forward-filled, and a day with a longer gap, or with more than 1% of its
samples filled, is marked incomplete.
"""

from __future__ import annotations

import datetime as _dt
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .model import (
    BatteryParams,
    GridConfig,
    HorizonSpec,
    PeriodProfile,
    PriceProfile,
    ProblemInstance,
    SoCInterval,
    TerminalTarget,
    as_multiple,
    delta_from_frequency,
)
from .uncertainty import Scenario, UncertaintyWindowSpec, contains, window_sums

log = logging.getLogger(__name__)

MAX_FILL_S = 60.0
MAX_FILLED_FRACTION = 0.01
DAY_TYPES = ("low", "medium", "high")


@dataclass(frozen=True)
class NominalDefaults:
    """Parameters of the nominal vehicle, grid and market setup."""

    y_min: float = 10.0
    y_max: float = 40.0
    y_star: float = 27.0
    p_star: float = 0.15
    eta_plus: float = 0.85
    eta_minus: float = 0.85
    ybar_plus: float = 7.0
    ybar_minus: float = 7.0
    dt: float = 0.5
    gamma: float = 0.5
    Gamma: float = 2.5
    gamma_hat: float = 0.5
    Gamma_hat: float = 24.0
    T: float = 24.0
    f0: float = 50.0
    delta_f: float = 0.2

    def __post_init__(self):
        # building the pieces validates every field
        self.battery()
        self.horizon()
        self.u_hard()
        self.u_soft()
        TerminalTarget(self.y_star, self.p_star)
        GridConfig(self.f0, self.delta_f)

    @property
    def K(self) -> int:
        return as_multiple(self.T, self.dt, "T")

    def battery(self) -> BatteryParams:
        return BatteryParams(self.y_min, self.y_max, self.eta_plus, self.eta_minus)

    def horizon(self) -> HorizonSpec:
        return HorizonSpec.from_dt(self.T, self.dt)

    def grid(self) -> GridConfig:
        return GridConfig(self.f0, self.delta_f)

    def target(self) -> TerminalTarget:
        return TerminalTarget(self.y_star, self.p_star)

    def u_hard(self) -> UncertaintyWindowSpec:
        return UncertaintyWindowSpec(self.gamma, self.Gamma, self.dt, self.K)

    def u_soft(self) -> UncertaintyWindowSpec:
        return UncertaintyWindowSpec(self.gamma_hat, self.Gamma_hat, self.dt, self.K)

    def profile(self, d=None) -> PeriodProfile:
        K = self.K
        d = np.zeros(K) if d is None else d
        return PeriodProfile(d, np.full(K, self.ybar_plus), np.full(K, self.ybar_minus))

    def replace(self, **changes) -> "NominalDefaults":
        return replace(self, **changes)

    def instance(self, prices: PriceProfile, d=None, y0_hard: SoCInterval | None = None, y0_soft: SoCInterval | None = None) -> ProblemInstance:
        y0 = SoCInterval.point(self.y_star)
        return ProblemInstance(
            battery=self.battery(),
            horizon=self.horizon(),
            profile=self.profile(d),
            prices=prices,
            target=self.target(),
            y0_hard=y0_hard or y0,
            y0_soft=y0_soft or y0_hard or y0,
            u_hard=self.u_hard(),
            u_soft=self.u_soft(),
            grid=self.grid(),
        )


def nominal_instance(defaults: NominalDefaults | None = None, p_a: float = 0.008, drive_kw: float = 2.0) -> ProblemInstance:
    """A representative working day on the nominal parameters.

    Driving 07:00-09:00 and 17:00-19:00, peak tariff 06:00-22:00 and a flat
    availability price.  Used by examples, benchmarks and tests.
    """
    nd = defaults or NominalDefaults()
    K, dt = nd.K, nd.dt
    hours = np.arange(K) * dt
    d = np.where(((hours >= 7) & (hours < 9)) | ((hours >= 17) & (hours < 19)), drive_kw, 0.0)
    p_b = np.where((hours >= 6) & (hours < 22), 0.16, 0.12)
    prices = PriceProfile(p_b=p_b, p_r=np.full(K, p_a), p_a=np.full(K, p_a))
    hard = SoCInterval(nd.y_star - 3.0, nd.y_star + 3.0)
    soft = SoCInterval(nd.y_star - 1.0, nd.y_star + 1.0)
    return nd.instance(prices, d, hard, soft)


# ---------------------------------------------------------------- frequency


@dataclass(frozen=True)
class FrequencyTrace:
    """Normalized deviation samples on a UTC time axis.

    Args:
        timestamps: strictly increasing ``datetime64[ns]`` values (UTC).
        delta: normalized deviation, same length, within [-1, 1].
        gaps: (start, seconds) of every spacing above the nominal step.
    """

    timestamps: np.ndarray
    delta: np.ndarray
    step_s: float = 10.0
    gaps: tuple = ()

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[ns]")
        d = np.asarray(self.delta, dtype=float)
        if ts.shape != d.shape:
            raise ValueError("timestamps and values differ in length")
        if ts.size > 1 and np.any(np.diff(ts) <= np.timedelta64(0, "ns")):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(d)) or np.any(np.abs(d) > 1.0):
            raise ValueError("normalized deviations must be finite and within [-1, 1]")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "delta", d)

    def __len__(self) -> int:
        return self.delta.shape[0]

    def daily(self, dt: float, T: float = 24.0) -> tuple[list, np.ndarray, np.ndarray]:
        """Regular daily arrays on the ``step_s`` grid.

        Returns:
            (dates, values of shape (days, steps), complete flags).  Gaps of
            up to 60 s are forward-filled; samples in longer gaps stay NaN.
        """
        step = np.timedelta64(int(round(self.step_s * 1e9)), "ns")
        per_day = int(round(T * 3600 / self.step_s))
        if abs(per_day * self.step_s - T * 3600) > 1e-9:
            raise ValueError("sample step does not divide the day")
        as_multiple(dt * 3600, self.step_s, "trading interval in seconds")
        if len(self) == 0:
            return [], np.zeros((0, per_day)), np.zeros(0, dtype=bool)
        day0 = self.timestamps[0].astype("datetime64[D]")
        day1 = self.timestamps[-1].astype("datetime64[D]")
        n_days = int((day1 - day0).astype(int)) + 1
        grid = np.full(n_days * per_day, np.nan)
        pos = (self.timestamps - day0.astype("datetime64[ns]")) / step
        on_grid = np.abs(pos - np.round(pos)) < 1e-6
        if not np.all(on_grid):
            raise ValueError(f"{int((~on_grid).sum())} timestamps are off the {self.step_s:g} s grid")
        grid[np.round(pos).astype(np.int64)] = self.delta
        filled = pd.Series(grid).ffill(limit=int(MAX_FILL_S // self.step_s)).to_numpy()
        was_gap = np.isnan(grid)
        values = filled.reshape(n_days, per_day)
        n_filled = (was_gap & ~np.isnan(filled)).reshape(n_days, per_day).sum(axis=1)
        complete = ~np.isnan(values).any(axis=1) & (n_filled <= MAX_FILLED_FRACTION * per_day)
        dates = [(day0 + np.timedelta64(i, "D")).astype(object) for i in range(n_days)]
        return dates, values, complete


def _bad_lines(mask: np.ndarray) -> list:
    # header is line 1
    return [int(i) + 2 for i in np.flatnonzero(mask)]


def load_frequency_csv(path, grid: GridConfig | None = None, step_s: float = 10.0) -> FrequencyTrace:
    """Read ``timestamp,hz`` or ``timestamp,delta`` samples.

    Raises:
        ValueError: on unparseable rows (with line numbers), a wrong header,
            or timestamps that are not strictly increasing.
    """
    grid = grid or GridConfig()
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    cols = [c.strip() for c in df.columns]
    if len(cols) != 2 or cols[0] != "timestamp" or cols[1] not in ("hz", "delta"):
        raise ValueError(f"{path}: expected header 'timestamp,hz' or 'timestamp,delta', got {','.join(cols)}")
    ts = pd.to_datetime(df.iloc[:, 0].str.strip(), utc=True, errors="coerce", format="mixed")
    val = pd.to_numeric(df.iloc[:, 1].str.strip(), errors="coerce")
    bad = ts.isna().to_numpy() | ~np.isfinite(val.to_numpy(dtype=float))
    if bad.any():
        lines = _bad_lines(bad)
        raise ValueError(f"{path}: unparseable rows at lines {lines[:10]}{' ...' if len(lines) > 10 else ''}")
    stamps = ts.dt.tz_convert(None).to_numpy(dtype="datetime64[ns]")
    diffs = np.diff(stamps)
    if np.any(diffs <= np.timedelta64(0, "ns")):
        at = _bad_lines(np.concatenate([[False], diffs <= np.timedelta64(0, "ns")]))
        raise ValueError(f"{path}: timestamps not strictly increasing at lines {at[:10]}")
    x = val.to_numpy(dtype=float)
    delta = delta_from_frequency(x, grid) if cols[1] == "hz" else np.clip(x, -1.0, 1.0)
    delta = np.atleast_1d(delta)
    nominal = np.timedelta64(int(round(step_s * 1e9)), "ns")
    big = np.flatnonzero(diffs > nominal)
    gaps = tuple((stamps[i], float(diffs[i] / np.timedelta64(1, "s"))) for i in big)
    if gaps:
        log.info("%s: %d gaps longer than %g s", path, len(gaps), step_s)
    return FrequencyTrace(stamps, delta, step_s, gaps)


def interval_average_delta(trace, horizon: HorizonSpec, step_s: float = 10.0, absolute: bool = False) -> Scenario:
    """Per-interval mean of a one-day 10 s trace.

    ``trace`` may be a ``FrequencyTrace`` covering exactly one day or a plain
    array of samples.  With ``absolute`` the mean of ``|delta|`` is returned,
    which is the quantity the window budgets act on.
    """
    v = trace.delta if isinstance(trace, FrequencyTrace) else np.asarray(trace, dtype=float)
    n = as_multiple(horizon.dt * 3600, step_s, "trading interval in seconds")
    if v.shape[-1] != n * horizon.K:
        raise ValueError(f"trace has {v.shape[-1]} samples, horizon needs {n * horizon.K}")
    if np.isnan(v).any():
        raise ValueError("trace has uncovered samples")
    v = np.abs(v) if absolute else v
    return Scenario(v.reshape(horizon.K, n).mean(axis=1))


# ------------------------------------------------------------ tariffs, driving


def _parse_hhmm(s) -> float:
    if isinstance(s, (int, float)):
        return float(s)
    h, m = str(s).split(":")
    return int(h) + int(m) / 60.0


def _local_hours(date: _dt.date, K: int, dt: float, tz: ZoneInfo):
    """Local timestamps of the starts of the UTC trading intervals of ``date``."""
    start = _dt.datetime(date.year, date.month, date.day, tzinfo=_dt.timezone.utc)
    return [(start + _dt.timedelta(hours=k * dt)).astimezone(tz) for k in range(K)]


def _is_workday(day: _dt.date, holidays) -> bool:
    return day.weekday() < 5 and day not in holidays


@dataclass(frozen=True)
class TariffCalendar:
    """Utility prices with off-peak/peak levels on low, medium and high days.

    Args:
        levels: mapping day type -> (off-peak, peak) price in EUR/kWh.
        day_types: mapping date -> day type; dates not listed are low days.
        peak_start, peak_end: local peak window in hours.
        timezone: IANA zone of the tariff clock.
        holidays: dates that count as non-working days.
    """

    levels: dict = field(default_factory=lambda: {"low": (0.11, 0.135), "medium": (0.13, 0.16), "high": (0.16, 0.55)})
    day_types: dict = field(default_factory=dict)
    peak_start: float = 6.0
    peak_end: float = 22.0
    timezone: str = "Europe/Paris"
    holidays: frozenset = frozenset()

    def __post_init__(self):
        if set(self.levels) != set(DAY_TYPES):
            raise ValueError(f"tariff needs levels for {DAY_TYPES}")
        for name, pair in self.levels.items():
            if len(pair) != 2 or min(pair) <= 0:
                raise ValueError(f"levels for {name} must be two positive prices")
        if not 0 <= self.peak_start < self.peak_end <= 24:
            raise ValueError("peak window must satisfy 0 <= start < end <= 24")
        ZoneInfo(self.timezone)
        for day, kind in self.day_types.items():
            if kind not in DAY_TYPES:
                raise ValueError(f"{day}: unknown day type {kind!r}")
            if kind == "high" and not (day.month in (11, 12, 1, 2, 3) and _is_workday(day, self.holidays)):
                raise ValueError(f"{day}: high price days must be work days between November and March")
            if kind == "medium" and day.weekday() == 6:
                raise ValueError(f"{day}: Sundays cannot be medium price days")

    def day_type(self, day: _dt.date) -> str:
        return self.day_types.get(day, "low")

    def prices(self, date: _dt.date, K: int, dt: float) -> np.ndarray:
        """Utility price of each UTC trading interval of ``date``."""
        tz = ZoneInfo(self.timezone)
        out = np.empty(K)
        for k, t in enumerate(_local_hours(date, K, dt, tz)):
            local = t.date()
            off, peak = self.levels[self.day_type(local)]
            h = t.hour + t.minute / 60.0
            on_peak = _is_workday(local, self.holidays) and self.peak_start <= h < self.peak_end
            out[k] = peak if on_peak else off
        return out

    @property
    def n_levels(self) -> int:
        return len({p for pair in self.levels.values() for p in pair})


def load_day_types(path) -> dict:
    df = pd.read_csv(path, dtype=str)
    if list(df.columns) != ["date", "type"]:
        raise ValueError(f"{path}: expected header 'date,type'")
    dates = pd.to_datetime(df["date"], errors="coerce")
    if dates.isna().any():
        raise ValueError(f"{path}: unparseable dates at lines {_bad_lines(dates.isna().to_numpy())[:10]}")
    return {d.date(): t.strip() for d, t in zip(dates, df["type"])}


def load_holidays(path) -> frozenset:
    """One ISO date per line; blank lines and ``#`` comments are ignored."""
    out = set()
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            out.add(_dt.date.fromisoformat(line))
        except ValueError as exc:
            raise ValueError(f"{path}:{n}: {exc}") from None
    return frozenset(out)


@dataclass(frozen=True)
class DrivingWindow:
    weekdays: tuple
    start: float
    end: float

    def __post_init__(self):
        if not 0 <= self.start < self.end <= 24:
            raise ValueError("driving window must satisfy 0 <= start < end <= 24")
        if not set(self.weekdays) <= set(range(7)):
            raise ValueError("weekdays are 0 (Monday) .. 6 (Sunday)")

    @property
    def hours(self) -> float:
        return self.end - self.start


def _default_windows():
    work = (0, 1, 2, 3, 4)
    return (DrivingWindow(work, 7.0, 9.0), DrivingWindow(work, 17.0, 19.0), DrivingWindow((5,), 10.0, 12.0))


@lru_cache(maxsize=64)
def _count_windows(schedule: "DrivingSchedule", year: int) -> int:
    day, n = _dt.date(year, 1, 1), 0
    while day.year == year:
        n += len(schedule.occurrences(day))
        day += _dt.timedelta(days=1)
    return n


@dataclass(frozen=True)
class DrivingSchedule:
    """Weekly driving windows in local time, skipped on public holidays.

    The yearly driving energy ``mileage_km * kwh_per_km`` is split evenly
    over all windows that occur in the year, so every window of a given
    year carries the same energy.
    """

    windows: tuple = field(default_factory=_default_windows)
    mileage_km: float = 10_000.0
    kwh_per_km: float = 0.2
    holidays: frozenset = frozenset()
    timezone: str = "Europe/Paris"

    def __post_init__(self):
        if self.mileage_km < 0 or self.kwh_per_km < 0:
            raise ValueError("mileage and efficiency must be nonnegative")
        ZoneInfo(self.timezone)

    @property
    def yearly_kwh(self) -> float:
        return self.mileage_km * self.kwh_per_km

    def occurrences(self, day: _dt.date) -> list:
        if day in self.holidays:
            return []
        return [w for w in self.windows if day.weekday() in w.weekdays]

    def windows_in_year(self, year: int) -> int:
        return _count_windows(self, year)

    def window_kwh(self, year: int) -> float:
        n = self.windows_in_year(year)
        return self.yearly_kwh / n if n else 0.0

    def day_profile(self, date: _dt.date, K: int, dt: float) -> np.ndarray:
        """Driving power (kW) per UTC trading interval of ``date``."""
        tz = ZoneInfo(self.timezone)
        start = _dt.datetime(date.year, date.month, date.day, tzinfo=_dt.timezone.utc)
        stop = start + _dt.timedelta(hours=K * dt)
        d = np.zeros(K)
        for offset in (-1, 0, 1):
            local_day = date + _dt.timedelta(days=offset)
            for w in self.occurrences(local_day):
                t0 = _dt.datetime.combine(local_day, _dt.time(), tzinfo=tz) + _dt.timedelta(hours=w.start)
                t1 = _dt.datetime.combine(local_day, _dt.time(), tzinfo=tz) + _dt.timedelta(hours=w.end)
                a, b = max(t0, start), min(t1, stop)
                if a >= b:
                    continue
                k0 = (a - start).total_seconds() / 3600 / dt
                k1 = (b - start).total_seconds() / 3600 / dt
                if abs(k0 - round(k0)) > 1e-9 or abs(k1 - round(k1)) > 1e-9:
                    raise ValueError(f"driving window {w} does not align with the {dt} h grid")
                d[int(round(k0)):int(round(k1))] += self.window_kwh(local_day.year) / w.hours
        return d


# ----------------------------------------------------------------- datasets


@dataclass(frozen=True)
class Dataset:
    """Aligned daily series for a run of consecutive UTC days.

    Args:
        dates: the days.
        delta: (days, steps) normalized deviation samples.
        p_b: (days, K) utility prices.
        p_a: (days, K) availability prices.
        d: (days, K) driving power.
        complete: per-day flag; incomplete days are skipped by backtests.
        p_d: optional (days, steps) delivery prices.
        step_s: sample spacing in seconds.
        dt: trading interval in hours.
    """

    dates: tuple
    delta: np.ndarray
    p_b: np.ndarray
    p_a: np.ndarray
    d: np.ndarray
    complete: np.ndarray
    p_d: np.ndarray | None = None
    step_s: float = 10.0
    dt: float = 0.5

    def __post_init__(self):
        n = len(self.dates)
        for name in ("delta", "p_b", "p_a", "d"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[0] != n:
                raise ValueError(f"{name} must have one row per day")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.p_d is not None:
            pd_ = np.array(self.p_d, dtype=float)
            pd_.setflags(write=False)
            object.__setattr__(self, "p_d", pd_)
        c = np.array(self.complete, dtype=bool)
        c.setflags(write=False)
        object.__setattr__(self, "complete", c)
        if self.delta.shape[1] != self.steps_per_interval * self.K:
            raise ValueError("sample count does not match the trading grid")

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def K(self) -> int:
        return self.p_b.shape[1]

    @property
    def steps_per_interval(self) -> int:
        return as_multiple(self.dt * 3600, self.step_s, "trading interval in seconds")

    def prices(self, i: int) -> PriceProfile:
        p_d = None if self.p_d is None else self.p_d[i]
        return PriceProfile(p_b=self.p_b[i], p_r=self.p_a[i], p_a=self.p_a[i], p_d=p_d)

    def subset(self, start: int, stop: int) -> "Dataset":
        sl = slice(start, stop)
        return Dataset(
            tuple(self.dates[sl]), self.delta[sl], self.p_b[sl], self.p_a[sl], self.d[sl],
            self.complete[sl], None if self.p_d is None else self.p_d[sl], self.step_s, self.dt,
        )

    def with_trace(self, i: int, trace) -> "Dataset":
        delta = np.array(self.delta)
        delta[i] = trace
        return replace(self, delta=delta)


def build_day_prices(calendar: TariffCalendar, availability: pd.Series, date: _dt.date, K: int, dt: float, p_d=None) -> PriceProfile:
    """Price vectors for one UTC day.

    Args:
        calendar: utility tariff.
        availability: series indexed by (date, interval) with EUR/kW/h prices.
        date: the day.
        K, dt: trading grid.
        p_d: optional realized delivery prices for the day.

    Raises:
        ValueError: if any availability price of the day is missing.
    """
    try:
        p_a = np.array([availability.loc[(date, k)] for k in range(K)], dtype=float)
    except KeyError:
        raise ValueError(f"missing availability prices for {date}") from None
    return PriceProfile(p_b=calendar.prices(date, K, dt), p_r=p_a, p_a=p_a, p_d=p_d)


def load_availability(path) -> pd.Series:
    df = pd.read_csv(path)
    if list(df.columns) != ["date", "interval", "price_eur_per_kw_h"]:
        raise ValueError(f"{path}: expected header 'date,interval,price_eur_per_kw_h'")
    dates = pd.to_datetime(df["date"], errors="coerce")
    bad = dates.isna().to_numpy() | ~np.isfinite(pd.to_numeric(df["price_eur_per_kw_h"], errors="coerce").to_numpy(float))
    if bad.any():
        raise ValueError(f"{path}: unparseable rows at lines {_bad_lines(bad)[:10]}")
    idx = pd.MultiIndex.from_arrays([[d.date() for d in dates], df["interval"].astype(int)])
    return pd.Series(df["price_eur_per_kw_h"].to_numpy(float), index=idx)


def load_delivery(path, dates, steps: int, step_s: float) -> np.ndarray:
    """Delivery prices forward-filled onto the sample grid of each day."""
    df = pd.read_csv(path)
    if list(df.columns) != ["timestamp", "price_eur_per_kwh"]:
        raise ValueError(f"{path}: expected header 'timestamp,price_eur_per_kwh'")
    ts = pd.to_datetime(df["timestamp"], utc=True, errors="coerce", format="mixed")
    if ts.isna().any():
        raise ValueError(f"{path}: unparseable timestamps at lines {_bad_lines(ts.isna().to_numpy())[:10]}")
    s = pd.Series(df["price_eur_per_kwh"].to_numpy(float), index=ts.dt.tz_convert(None)).sort_index()
    out = np.empty((len(dates), steps))
    for i, day in enumerate(dates):
        grid = pd.date_range(pd.Timestamp(day), periods=steps, freq=pd.Timedelta(seconds=step_s))
        vals = s.reindex(s.index.union(grid)).ffill().reindex(grid).to_numpy()
        if np.isnan(vals).any():
            raise ValueError(f"{path}: no delivery price before {grid[np.isnan(vals).argmax()]}")
        out[i] = vals
    return out


def load_dataset(data_dir, defaults: NominalDefaults, calendar: TariffCalendar, driving: DrivingSchedule, step_s: float = 10.0) -> Dataset:
    """Read ``frequency.csv``, ``availability.csv`` and optional ``delivery.csv``,
    ``daytypes.csv`` and ``holidays.txt`` from ``data_dir``.
    """
    root = Path(data_dir)
    holidays = load_holidays(root / "holidays.txt") if (root / "holidays.txt").exists() else frozenset()
    if holidays:
        calendar = replace(calendar, holidays=calendar.holidays | holidays)
        driving = replace(driving, holidays=driving.holidays | holidays)
    if (root / "daytypes.csv").exists():
        calendar = replace(calendar, day_types={**calendar.day_types, **load_day_types(root / "daytypes.csv")})
    trace = load_frequency_csv(root / "frequency.csv", defaults.grid(), step_s)
    dates, delta, complete = trace.daily(defaults.dt, defaults.T)
    avail = load_availability(root / "availability.csv")
    K, dt = defaults.K, defaults.dt
    p_b, p_a, d = np.empty((len(dates), K)), np.empty((len(dates), K)), np.empty((len(dates), K))
    ok = np.array(complete)
    for i, day in enumerate(dates):
        try:
            pr = build_day_prices(calendar, avail, day, K, dt)
            p_b[i], p_a[i] = pr.p_b, pr.p_a
        except ValueError as exc:
            log.warning("%s", exc)
            p_b[i], p_a[i], ok[i] = np.nan, np.nan, False
        d[i] = driving.day_profile(day, K, dt)
    p_d = None
    if (root / "delivery.csv").exists():
        p_d = load_delivery(root / "delivery.csv", dates, delta.shape[1], step_s)
    return Dataset(tuple(dates), np.nan_to_num(delta), np.nan_to_num(p_b), np.nan_to_num(p_a), d, ok, p_d, step_s, dt)


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of the synthetic data generator.

    Args:
        seed: RNG seed.
        days: number of days.
        start: first UTC day.
        sigma_hz: stationary standard deviation of the frequency.
        tau_s: correlation time of the frequency process.
        constrain: None, "hard" or "soft"; project every day into that set.
        prices: "two-level" (off-peak/peak every day), "flat" or "calendar".
        p_a: availability price in EUR/kW/h.
        p_b: (off-peak, peak) utility prices for the two-level option.
    """

    seed: int = 2019
    days: int = 30
    start: _dt.date = _dt.date(2019, 1, 7)
    sigma_hz: float = 0.015
    tau_s: float = 120.0
    constrain: str | None = "hard"
    prices: str = "two-level"
    p_a: float = 0.008
    p_b: tuple = (0.12, 0.16)

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("need at least one day")
        if self.constrain not in (None, "hard", "soft"):
            raise ValueError(f"unknown constraint {self.constrain!r}")
        if self.prices not in ("two-level", "flat", "calendar"):
            raise ValueError(f"unknown price option {self.prices!r}")


def project_into_set(trace: np.ndarray, spec: UncertaintyWindowSpec) -> np.ndarray:
    """Scale intervals of a one-day trace down until the |delta| averages lie in ``spec``.

    A single forward pass suffices: each interval may use whatever budget the
    preceding ``w - 1`` intervals left in its window.
    """
    K = spec.K
    x = np.array(trace, dtype=float).reshape(K, -1)
    a = np.abs(x).mean(axis=1)
    out = a.copy()
    for k in range(K):
        used = out[max(0, k - spec.w + 1):k].sum()
        room = max(spec.b - used, 0.0) * (1 - 1e-12)
        if out[k] > room:
            x[k] *= room / out[k]
            out[k] = room
    return x.reshape(-1)


def synthetic_calendar(start: _dt.date, days: int, rng: np.random.Generator, holidays=frozenset()) -> dict:
    """Random valid day types: a few high days in winter, some medium days."""
    out = {}
    for i in range(days):
        day = start + _dt.timedelta(days=i)
        u = rng.random()
        if day.month in (11, 12, 1, 2, 3) and _is_workday(day, holidays) and u < 0.1:
            out[day] = "high"
        elif day.weekday() != 6 and u > 0.85:
            out[day] = "medium"
    return out


def synth_dataset(spec: SynthSpec | None = None, defaults: NominalDefaults | None = None, driving: DrivingSchedule | None = None, calendar: TariffCalendar | None = None) -> Dataset:
    """Deterministic synthetic dataset.

    The frequency is an AR(1) process around ``f0`` sampled every 10 s,
    normalized and clipped, and optionally projected into the hard or soft
    uncertainty set day by day.
    """
    spec = spec or SynthSpec()
    nd = defaults or NominalDefaults()
    driving = driving or DrivingSchedule()
    rng = np.random.default_rng(spec.seed)
    step_s = 10.0
    K, dt = nd.K, nd.dt
    per_day = int(round(nd.T * 3600 / step_s))
    n = spec.days * per_day
    phi = np.exp(-step_s / spec.tau_s)
    noise = rng.normal(0.0, spec.sigma_hz * np.sqrt(1 - phi**2), n)
    f = nd.f0 + lfilter([1.0], [1.0, -phi], noise)
    delta = delta_from_frequency(f, nd.grid()).reshape(spec.days, per_day)
    if spec.constrain is not None:
        u = nd.u_hard() if spec.constrain == "hard" else nd.u_soft()
        delta = np.stack([project_into_set(row, u) for row in delta])
    dates = tuple(spec.start + _dt.timedelta(days=i) for i in range(spec.days))
    hours = np.arange(K) * dt
    if spec.prices == "calendar":
        cal = calendar or TariffCalendar()
        cal = replace(cal, day_types={**synthetic_calendar(spec.start, spec.days, rng, cal.holidays), **cal.day_types})
        p_b = np.stack([cal.prices(day, K, dt) for day in dates])
    elif spec.prices == "flat":
        p_b = np.full((spec.days, K), float(np.mean(spec.p_b)))
    else:
        row = np.where((hours >= 6) & (hours < 22), spec.p_b[1], spec.p_b[0])
        p_b = np.tile(row, (spec.days, 1))
    p_a = np.full((spec.days, K), spec.p_a)
    d = np.stack([driving.day_profile(day, K, dt) for day in dates])
    return Dataset(dates, delta, p_b, p_a, d, np.ones(spec.days, dtype=bool), None, step_s, dt)


def day_in_set(delta_day: np.ndarray, spec: UncertaintyWindowSpec, tol: float = 1e-9) -> bool:
    """Whether the |delta| interval averages of one day lie in ``spec``."""
    a = np.abs(np.asarray(delta_day, float)).reshape(spec.K, -1).mean(axis=1)
    return contains(spec, a, tol)


def window_usage(delta_day: np.ndarray, spec: UncertaintyWindowSpec) -> np.ndarray:
    """Rolling window sums of the |delta| interval averages, in budget units."""
    a = np.abs(np.asarray(delta_day, float)).reshape(spec.K, -1).mean(axis=1)
    return window_sums(spec, a)
