"""YAML run configuration.

Every section is optional; missing keys fall back to the nominal setup.  See
``docs/config.md`` for the schema.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .data import DrivingSchedule, DrivingWindow, NominalDefaults, SynthSpec, TariffCalendar, _parse_hhmm, load_day_types, load_holidays
from .sim import CalibrationGrid, PenaltyPolicy, ScenarioVariant
from .solver import SolveSettings

SECTIONS = ("seed", "backend", "variant", "nominal", "driving", "tariff", "holidays", "penalty", "synthetic", "solver", "calibration", "verify", "sweep")


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass(frozen=True)
class VerifySettings:
    """Scale of the verification suite.

    Args:
        k_cap: largest K for which binary scenarios are enumerated.
        instances: random instances per LP check.
        days: synthetic days in the backtest checks.
        random_traces: random in-set traces per backtest day.
    """

    k_cap: int = 20
    instances: int = 25
    days: int = 30
    random_traces: int = 100


@dataclass(frozen=True)
class Config:
    seed: int = 2019
    backend: str = "bundled"
    variant: str = "nominal"
    nominal: NominalDefaults = field(default_factory=NominalDefaults)
    driving: DrivingSchedule = field(default_factory=DrivingSchedule)
    tariff: TariffCalendar = field(default_factory=TariffCalendar)
    penalty: PenaltyPolicy = field(default_factory=PenaltyPolicy)
    synthetic: SynthSpec = field(default_factory=SynthSpec)
    solver: SolveSettings = field(default_factory=SolveSettings)
    calibration: CalibrationGrid = field(default_factory=CalibrationGrid)
    workers: int = 1
    verify: VerifySettings = field(default_factory=VerifySettings)
    sweep_days: int = 7
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def digest(self) -> str:
        """Short hash of the resolved configuration."""
        return config_hash(self)

    def with_seed(self, seed: int) -> "Config":
        return replace(self, seed=int(seed), synthetic=replace(self.synthetic, seed=int(seed)))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(str(v) for v in obj)
    if isinstance(obj, (_dt.date,)):
        return obj.isoformat()
    return obj


def config_hash(cfg: Config) -> str:
    parts = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "raw"}
    payload = {}
    for k, v in parts.items():
        payload[k] = asdict(v) if hasattr(v, "__dataclass_fields__") else v
    text = json.dumps(_jsonable(payload), sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _take(section: dict, cls, name: str, **extra):
    allowed = {f.name for f in fields(cls) if f.init}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**{**section, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}") from exc


def _date(v, what):
    if isinstance(v, _dt.date):
        return v
    try:
        return _dt.date.fromisoformat(str(v))
    except ValueError as exc:
        raise ConfigError(f"{what}: not an ISO date: {v!r}") from exc


def _section(raw: dict, key: str) -> dict:
    sec = raw.get(key)
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"[{key}] must be a mapping")
    return dict(sec)


def build_config(raw: dict | None, base_dir: Path | None = None) -> Config:
    """Validate a parsed YAML mapping and build a ``Config``."""
    raw = dict(raw or {})
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    base_dir = base_dir or Path.cwd()
    seed = raw.get("seed", 2019)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    backend = raw.get("backend", "bundled")
    if backend not in ("bundled", "external"):
        raise ConfigError("backend must be 'bundled' or 'external'")
    variant = raw.get("variant", "nominal")
    try:
        ScenarioVariant(variant)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    nominal = _take(_section(raw, "nominal"), NominalDefaults, "nominal")

    hol = raw.get("holidays")
    hol = [] if hol is None else hol
    if isinstance(hol, str):
        holidays = load_holidays(base_dir / hol)
    elif isinstance(hol, list):
        holidays = frozenset(_date(v, "holidays") for v in hol)
    else:
        raise ConfigError("holidays must be a list of dates or a file path")

    drv = _section(raw, "driving")
    windows = drv.pop("windows", None)
    if windows is not None:
        try:
            windows = tuple(DrivingWindow(tuple(w["weekdays"]), _parse_hhmm(w["start"]), _parse_hhmm(w["end"])) for w in windows)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid driving window: {exc}") from exc
        drv["windows"] = windows
    driving = _take(drv, DrivingSchedule, "driving", holidays=holidays)

    tar = _section(raw, "tariff")
    if "levels" in tar:
        tar["levels"] = {k: tuple(v) for k, v in tar["levels"].items()}
    for key in ("peak_start", "peak_end"):
        if key in tar:
            tar[key] = _parse_hhmm(tar[key])
    if "day_types" in tar:
        dt_src = tar["day_types"]
        tar["day_types"] = load_day_types(base_dir / dt_src) if isinstance(dt_src, str) else {_date(k, "day_types"): v for k, v in dt_src.items()}
    tariff = _take(tar, TariffCalendar, "tariff", holidays=holidays)

    penalty = _take(_section(raw, "penalty"), PenaltyPolicy, "penalty")

    syn = _section(raw, "synthetic")
    if "start" in syn:
        syn["start"] = _date(syn["start"], "synthetic.start")
    if "p_b" in syn:
        syn["p_b"] = tuple(syn["p_b"])
    syn.setdefault("seed", seed)
    synthetic = _take(syn, SynthSpec, "synthetic")

    solver = _take(_section(raw, "solver"), SolveSettings, "solver")

    cal = _section(raw, "calibration")
    workers = cal.pop("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("calibration.workers must be a positive integer")
    for key in ("p_star_values", "y_star_fracs"):
        if key in cal:
            cal[key] = tuple(float(v) for v in cal[key])
    calibration = _take(cal, CalibrationGrid, "calibration")

    verify = _take(_section(raw, "verify"), VerifySettings, "verify")
    sw = _section(raw, "sweep")
    sweep_days = sw.pop("days", 7)
    if sw:
        raise ConfigError(f"unknown keys in [sweep]: {sorted(sw)}")
    if not isinstance(sweep_days, int) or sweep_days < 1:
        raise ConfigError("sweep.days must be a positive integer")

    return Config(seed, backend, variant, nominal, driving, tariff, penalty, synthetic, solver, calibration, workers, verify, sweep_days, raw)


def load_config(path=None) -> Config:
    """Read a YAML file; ``None`` gives the nominal configuration."""
    if path is None:
        return build_config({})
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return build_config(raw, path.parent)
