"""Command-line interface: ``robust-v2g <command> [options]``."""

from __future__ import annotations

import argparse
import datetime as _dt
import itertools
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import Config, ConfigError, load_config
from .data import Dataset, NominalDefaults, load_dataset, synth_dataset
from .lp import write_mps
from .model import SoCInterval
from .robustlp import assemble_lp, extract_decision, size_report
from .sim import LEDGER_COLUMNS, VARIANTS, PenaltyPolicy, ScenarioVariant, calibrate, day_instance, run_backtest
from .solver import solve
from .uncertainty import soc_envelope
from . import verify as _verify

log = logging.getLogger("robust_v2g")

EXIT_OK, EXIT_FAIL, EXIT_IO = 0, 1, 2
SWEEP_AXES = ("charger_kw", "battery_kwh", "activation_ratio", "mileage_km", "k_pen", "p_y")


class Failure(Exception):
    """Infeasible instance or failed check; exit code 1."""


# ------------------------------------------------------------------ output


def _header(cfg: Config) -> str:
    return f"robust-v2g {__version__} config={cfg.digest} seed={cfg.seed}"


def write_csv(df: pd.DataFrame, path: Path, cfg: Config) -> Path:
    """Write ``df`` atomically with a provenance comment line."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(f"# {_header(cfg)}\n")
            df.to_csv(fh, index=False, lineterminator="\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def _plots_enabled(args) -> bool:
    return not args.no_plots


# ------------------------------------------------------------------ inputs


def _dataset(cfg: Config, args, defaults: NominalDefaults | None = None, days: int | None = None) -> Dataset:
    nd = defaults or cfg.nominal
    if args.data:
        ds = load_dataset(args.data, nd, cfg.tariff, cfg.driving)
        if days is not None:
            ds = ds.subset(0, min(days, ds.n_days))
        return ds
    spec = cfg.synthetic if days is None else replace(cfg.synthetic, days=days)
    return synth_dataset(spec, nd, cfg.driving, cfg.tariff)


def _day_index(ds: Dataset, date: str | None) -> int:
    if date is None:
        return 0
    try:
        day = _dt.date.fromisoformat(date)
    except ValueError as exc:
        raise ConfigError(f"--date: not an ISO date: {date!r}") from exc
    if day not in ds.dates:
        raise ConfigError(f"--date {day} is not covered by the dataset")
    return ds.dates.index(day)


# ---------------------------------------------------------------- commands


def cmd_solve_day(cfg: Config, args) -> int:
    nd = cfg.nominal.replace(ybar_minus=0.0) if args.unidirectional else cfg.nominal
    ds = _dataset(cfg, args, nd)
    i = _day_index(ds, args.date)
    if not ds.complete[i]:
        raise ConfigError(f"day {ds.dates[i]} has incomplete frequency data")
    y0 = SoCInterval.point(nd.y_star if args.y0 is None else args.y0)
    inst = day_instance(ds, i, nd, nd.target(), y0, y0)
    model = assemble_lp(inst, regulation=not args.no_regulation)
    res = solve(model, cfg.solver, backend=args.backend)
    day = extract_decision(model, res, inst)
    if not day.optimal:
        raise Failure(f"{ds.dates[i]}: the day LP is {res.status} ({res.message}); check the initial SoC, driving demand and charger limits")
    dec = day.decision
    K = inst.K
    out = Path(args.out)
    decision = pd.DataFrame({
        "interval": np.arange(K),
        "x_b_kw": dec.x_b,
        "x_r_kw": dec.x_r,
        "m_kw": day.m_closed,
        "z_kwh": np.full(K, day.z),
    })
    lo, hi = soc_envelope(dec, inst.y0_hard, inst, inst.u_hard)
    envelope = pd.DataFrame({"interval": np.arange(K + 1), "soc_lo_kwh": lo, "soc_hi_kwh": hi})
    rep = size_report(model)
    diag = pd.DataFrame({
        "key": ["date", "status", "objective_eur", "iterations", "backend", "variables", "constraints", "envelope_min_kwh", "envelope_max_kwh"],
        "value": [str(ds.dates[i]), res.status, repr(res.objective), res.iterations, res.backend, rep.variables, rep.constraints, repr(float(lo.min())), repr(float(hi.max()))],
    })
    write_csv(decision, out / "decision.csv", cfg)
    write_csv(envelope, out / "envelope.csv", cfg)
    write_csv(diag, out / "diagnostics.csv", cfg)
    if _plots_enabled(args):
        from .plots import plot_decision

        plot_decision(decision, envelope, out / "decision.png", inst.battery.y_min, inst.battery.y_max)
    print(f"{ds.dates[i]}: objective {res.objective:.6f} EUR, envelope [{lo.min():.3f}, {hi.max():.3f}] kWh")
    return EXIT_OK


def _policy(cfg: Config, args) -> PenaltyPolicy:
    return replace(cfg.penalty, mode=args.policy) if getattr(args, "policy", None) else cfg.penalty


def _target(cfg: Config, args):
    t = cfg.nominal.target()
    return replace(t, p_star=t.p_star if args.p_star is None else args.p_star, y_star=t.y_star if args.y_star is None else args.y_star)


def cmd_backtest(cfg: Config, args) -> int:
    variants = list(VARIANTS) if args.variant == "all" else [args.variant or cfg.variant]
    ds = _dataset(cfg, args, days=args.days)
    out = Path(args.out)
    longs, summary = [], []
    for tag in variants:
        ledger = run_backtest(ds, ScenarioVariant(tag), _policy(cfg, args), _target(cfg, args), cfg.nominal, cfg.solver, args.backend)
        write_csv(ledger.frame[LEDGER_COLUMNS], out / f"ledger_{tag}.csv", cfg)
        write_csv(ledger.frame, out / f"days_{tag}.csv", cfg)
        longs.append(ledger.long_frame())
        df = ledger.frame
        summary.append({
            "variant": tag, "days": len(df), "skipped": len(ledger.skipped), "value_eur": ledger.value,
            "cost_eur": float(df["cost"].sum()), "baseline_cost_eur": float(df["baseline_cost"].sum()),
            "penalty_eur": float(df["penalty"].sum()), "violations": int(df["violations"].sum()),
        })
        print(f"{tag}: value {ledger.value:.4f} EUR over {len(df)} days, {int(df['violations'].sum())} violation events")
    long = pd.concat(longs, ignore_index=True)
    write_csv(long, out / "value_long.csv", cfg)
    write_csv(pd.DataFrame(summary), out / "summary.csv", cfg)
    if _plots_enabled(args) and len(long):
        from .plots import plot_cumulative_value

        plot_cumulative_value(long, out / "value.png")
    return EXIT_OK


def cmd_calibrate(cfg: Config, args) -> int:
    ds = _dataset(cfg, args, days=args.days)
    grid = cfg.calibration
    if args.holdout:
        half = ds.n_days // 2
        if half < 1:
            raise ConfigError("--holdout needs at least two days")
        train, test = ds.subset(0, half), ds.subset(half, ds.n_days)
    else:
        train, test = ds, None
    variant = args.variant or cfg.variant
    kw = dict(grid=grid, variant=variant, policy=_policy(cfg, args), defaults=cfg.nominal, settings=cfg.solver, backend=args.backend, workers=cfg.workers)
    res = calibrate(train, **kw)
    out = Path(args.out)
    write_csv(res.table, out / "calibration.csv", cfg)
    best = {"p_star": res.p_star, "y_star": res.y_star}
    if test is not None:
        test_res = calibrate(test, **kw)
        write_csv(test_res.table, out / "calibration_test.csv", cfg)
        best["regret"] = res.regret(test_res.table)
    write_csv(pd.DataFrame([best]), out / "best.csv", cfg)
    if _plots_enabled(args):
        from .plots import plot_calibration

        plot_calibration(res.table, out / "calibration.png")
    print(f"best p_star={res.p_star:.3f} EUR/kWh, y_star={res.y_star:.3f} kWh" + (f", regret {best['regret']:.3f}" if "regret" in best else ""))
    return EXIT_OK


CHECKS = ("A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9", "A11")


def cmd_verify(cfg: Config, args) -> int:
    vs = cfg.verify
    if args.max_k is not None and args.max_k > vs.k_cap:
        print(f"refusing to enumerate scenarios for K={args.max_k}: the cap is K <= {vs.k_cap} (verify.k_cap)", file=sys.stderr)
        return EXIT_IO
    wanted = set(CHECKS if not args.checks else [c.strip().upper() for c in args.checks.split(",")])
    unknown = wanted - set(CHECKS)
    if unknown:
        raise ConfigError(f"unknown checks {sorted(unknown)}; choose from {CHECKS}")
    s, seed = cfg.solver, cfg.seed
    results = []
    if "A1" in wanted:
        results.append(_verify.check_binary_vertices(seed))
    if "A2" in wanted:
        results.append(_verify.check_oracle_bruteforce(seed + 1))
    if "A3" in wanted:
        results.append(_verify.check_discretization(seed + 2))
    if "A4" in wanted:
        results += _verify.check_lp_equivalence(seed + 3, vs.instances, settings=s)
    if "A5" in wanted:
        results.append(_verify.check_sizes())
    if "A6" in wanted:
        results.append(_verify.check_variance(min(12, vs.k_cap) if args.max_k is None else args.max_k))
    if wanted & {"A7", "A8"}:
        bt = _verify.check_backtests(seed, vs.days, vs.random_traces, s, args.backend, cfg.nominal)
        results += [r for r in bt.results if r.check_id in wanted]
    if "A9" in wanted:
        results.append(_verify.check_sensitivity(seed, settings=s, backend=args.backend))
    if "A11" in wanted:
        results += _verify.check_performance(s)
    frame = pd.DataFrame([vars(r) for r in results])
    write_csv(frame, Path(args.out) / "verify.csv", cfg)
    for r in results:
        print(r.line())
    failed = [r.check_id for r in results if not r.passed]
    if failed:
        raise Failure(f"failed checks: {', '.join(failed)}")
    return EXIT_OK


def _parse_axis(text: str) -> tuple[str, list]:
    name, sep, values = text.partition("=")
    name = name.strip()
    if not sep or name not in SWEEP_AXES:
        raise ConfigError(f"--axis expects NAME=v1,v2,... with NAME in {SWEEP_AXES}, got {text!r}")
    try:
        vals = [float(v) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--axis {name}: values must be numbers") from exc
    if not vals:
        raise ConfigError(f"--axis {name}: empty axis")
    return name, vals


def apply_sweep_point(cfg: Config, point: dict) -> Config:
    nd, driving, penalty = cfg.nominal, cfg.driving, cfg.penalty
    for axis, v in point.items():
        if axis == "charger_kw":
            nd = nd.replace(ybar_plus=v, ybar_minus=0.0 if nd.ybar_minus == 0 else v)
        elif axis == "battery_kwh":
            nd = nd.replace(y_max=v, y_star=min(nd.y_star, v))
        elif axis == "activation_ratio":
            nd = nd.replace(Gamma=nd.gamma / v)
        elif axis == "mileage_km":
            driving = replace(driving, mileage_km=v)
        elif axis == "k_pen":
            penalty = replace(penalty, k_pen=v)
        elif axis == "p_y":
            penalty = replace(penalty, p_y=v)
    return replace(cfg, nominal=nd, driving=driving, penalty=penalty)


def cmd_sweep(cfg: Config, args) -> int:
    if not args.axis:
        raise ConfigError("sweep needs at least one --axis NAME=v1,v2,...")
    axes = [_parse_axis(a) for a in args.axis]
    names = [a for a, _ in axes]
    if len(set(names)) != len(names):
        raise ConfigError("each sweep axis may be given once")
    days = args.days or cfg.sweep_days
    variant = args.variant or cfg.variant
    rows = []
    for values in itertools.product(*(v for _, v in axes)):
        point = dict(zip(names, values))
        try:
            pcfg = apply_sweep_point(cfg, point)
        except ValueError as exc:
            raise ConfigError(f"sweep point {point}: {exc}") from exc
        ds = _dataset(pcfg, args, pcfg.nominal, days)
        ledger = run_backtest(ds, variant, pcfg.penalty, pcfg.nominal.target(), pcfg.nominal, pcfg.solver, args.backend)
        df = ledger.frame
        rows.append({
            **point,
            "days": len(df),
            "value_eur": ledger.value,
            "planning_value_eur": float((df["lp_objective_noreg"] - df["lp_objective"]).sum()),
            "revenue_eur": float(df["revenue"].sum()),
            "penalty_eur": float(df["penalty"].sum()),
            "violations": int(df["violations"].sum()),
        })
        print(", ".join(f"{k}={v:g}" for k, v in point.items()) + f": value {ledger.value:.4f} EUR")
    table = pd.DataFrame(rows)
    out = Path(args.out)
    write_csv(table, out / "sweep.csv", cfg)
    if _plots_enabled(args):
        from .plots import plot_sweep

        plot_sweep(table, names, out / "sweep.png")
    return EXIT_OK


def cmd_export_lp(cfg: Config, args) -> int:
    ds = _dataset(cfg, args, days=None if args.data else 1)
    i = _day_index(ds, args.date)
    y0 = SoCInterval.point(cfg.nominal.y_star)
    inst = day_instance(ds, i, cfg.nominal, cfg.nominal.target(), y0, y0)
    model = assemble_lp(inst, regulation=not args.no_regulation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out, suffix=".mps.tmp")
    os.close(fd)
    write_mps(model, tmp)
    os.replace(tmp, out / "day.mps")
    rep = size_report(model)
    write_csv(pd.DataFrame([vars(rep)]), out / "lp_size.csv", cfg)
    print(f"wrote {out / 'day.mps'}: {model.n_vars} columns, {model.n_cons} rows ({rep.variables} variables, {rep.constraints} constraints counted in full)")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML configuration file")
    common.add_argument("--data", type=Path, help="directory with frequency.csv, availability.csv and optional files")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (created if absent)")
    common.add_argument("--backend", choices=("bundled", "external"), default=None, help="LP solver backend")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--no-plots", action="store_true", help="write CSV files only")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="robust-v2g", description="Robust V2G frequency-regulation bidding and backtesting.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve-day", parents=[common], help="solve the bidding LP for one day")
    s.add_argument("--date", help="ISO date in the dataset (default: first day)")
    s.add_argument("--y0", type=float, help="initial SoC in kWh (default: target SoC)")
    s.add_argument("--no-regulation", action="store_true", help="fix all reserve bids at zero")
    s.add_argument("--unidirectional", action="store_true", help="charger cannot discharge")
    s.set_defaults(func=cmd_solve_day)

    for name, func, helptext in (("backtest", cmd_backtest, "chain days and settle against the realized traces"), ("calibrate", cmd_calibrate, "grid search of the terminal target")):
        b = sub.add_parser(name, parents=[common], help=helptext)
        b.add_argument("--variant", choices=VARIANTS + (("all",) if name == "backtest" else ()), default=None)
        b.add_argument("--policy", choices=("financial", "exclusion"), default=None, help="override the penalty mode")
        b.add_argument("--days", type=int, default=None, help="limit the number of days")
        b.set_defaults(func=func)
        if name == "backtest":
            b.add_argument("--p-star", type=float, default=None)
            b.add_argument("--y-star", type=float, default=None)
        else:
            b.add_argument("--holdout", action="store_true", help="calibrate on the first half and report regret on the second")

    v = sub.add_parser("verify", parents=[common], help="run the property checks")
    v.add_argument("--checks", help=f"comma-separated subset of {','.join(CHECKS)}")
    v.add_argument("--max-k", type=int, default=None, help="largest K to enumerate in the variance check")
    v.set_defaults(func=cmd_verify)

    w = sub.add_parser("sweep", parents=[common], help="sensitivity sweep over parameter axes")
    w.add_argument("--axis", action="append", help=f"NAME=v1,v2,... with NAME in {', '.join(SWEEP_AXES)}; repeatable")
    w.add_argument("--days", type=int, default=None, help="days per grid point")
    w.add_argument("--variant", choices=VARIANTS, default=None)
    w.set_defaults(func=cmd_sweep)

    e = sub.add_parser("export-lp", parents=[common], help="write one day's LP as free MPS")
    e.add_argument("--date")
    e.add_argument("--no-regulation", action="store_true")
    e.set_defaults(func=cmd_export_lp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            cfg = cfg.with_seed(args.seed)
        args.backend = args.backend or cfg.backend
        for opt in ("days",):
            if getattr(args, opt, None) is not None and getattr(args, opt) < 1:
                raise ConfigError(f"--{opt} must be positive")
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return args.func(cfg, args)
    except (Failure, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
