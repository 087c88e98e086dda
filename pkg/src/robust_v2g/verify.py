"""Property checks run by ``robust-v2g verify`` and the acceptance tests.

Every check returns one or more ``CheckResult`` rows with the measured
metric, the tolerance it was held to and the wall time.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .data import NominalDefaults, SynthSpec, nominal_instance, synth_dataset
from .lp import LPModel
from .model import (
    BatteryParams,
    HorizonSpec,
    MarketDecision,
    PeriodProfile,
    PriceProfile,
    ProblemInstance,
    SoCInterval,
    TerminalTarget,
    expected_cost,
    soc_trajectory,
)
from .robustlp import assemble_lp, extract_decision, size_formulas, size_report, solve_day, verify_robust_feasibility
from .sim import (
    PenaltyPolicy,
    SimClock,
    adversarial_scenarios,
    adversarial_trace,
    day_instance,
    random_in_set_traces,
    run_backtest,
    simulate_batch,
    trace_in_set,
)
from .solver import SolveSettings, solve
from .uncertainty import (
    UncertaintyWindowSpec,
    budget_set_max_variance,
    check_variance_bound,
    contains,
    enumerate_binary_scenarios,
    min_soc_slopes,
    refine_subgrid,
    variance_bound,
    worst_case_max_soc,
    worst_case_min_soc,
    worst_case_weighted_sum,
)


@dataclass
class CheckResult:
    check_id: str
    name: str
    passed: bool
    metric: float
    tolerance: float
    runtime_s: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.check_id} {self.name}: metric={self.metric:.3g} tol={self.tolerance:.3g} time={self.runtime_s:.2f}s {self.detail}".rstrip()


ORACLE_GRID = tuple(itertools.product((4, 6, 8), (2, 3, 4), (1, 2)))


def _spec(K, w, b, dt=0.5) -> UncertaintyWindowSpec:
    return UncertaintyWindowSpec(gamma=b * dt, Gamma=w * dt, dt=dt, K=K)


def random_instance(rng: np.random.Generator, K: int, dt: float = 0.5) -> ProblemInstance:
    """A small random instance on which doing nothing is robustly feasible."""
    eta_p, eta_m = rng.uniform(0.7, 1.0, 2)
    y_min = rng.uniform(0.0, 5.0)
    y_max = y_min + rng.uniform(6.0, 20.0)
    drive = rng.random(K) < 0.25
    d = np.where(drive, rng.uniform(0.2, 1.5, K), 0.0)
    cap = rng.uniform(1.0, 5.0)
    prof = PeriodProfile(d, np.where(drive, 0.0, cap), np.where(drive, 0.0, rng.uniform(0.0, cap)))
    p_b = rng.uniform(0.05, 0.3, K)
    prices = PriceProfile(p_b, rng.uniform(0.0, 0.2, K), rng.uniform(0.0, 0.2, K))
    need = dt * d.sum()
    lo = y_min + need + rng.uniform(0.0, 1.0)
    hi = min(y_max, lo + rng.uniform(0.0, 2.0))
    mid = 0.5 * (lo + hi)
    w = int(rng.integers(1, K + 1))
    b = int(rng.integers(1, w + 1))
    w_s = int(rng.integers(w, K + 1))
    b_s = int(rng.integers(1, b + 1))
    return ProblemInstance(
        battery=BatteryParams(y_min, y_max, eta_p, eta_m),
        horizon=HorizonSpec.from_dt(K * dt, dt),
        profile=prof,
        prices=prices,
        target=TerminalTarget(rng.uniform(y_min, y_max), rng.uniform(0.0, 0.5)),
        y0_hard=SoCInterval(lo, hi),
        y0_soft=SoCInterval(max(lo, mid - 0.1), min(hi, mid + 0.1)),
        u_hard=_spec(K, w, b, dt),
        u_soft=_spec(K, w_s, b_s, dt),
    )


def robust_objective(decision: MarketDecision, inst: ProblemInstance) -> float:
    """Planning objective of a decision evaluated through the oracles."""
    K = inst.K
    hi = worst_case_max_soc(decision, inst.y0_soft.hi, inst, inst.u_soft, K)
    lo = worst_case_min_soc(decision, inst.y0_soft.lo, inst, inst.u_soft, K)
    y = inst.target.y_star
    return expected_cost(decision, inst.prices, inst.horizon) + inst.target.p_star * max(hi - y, y - lo)


def _timed(fn):
    t = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t


# ----------------------------------------------------------------- oracles


def check_binary_vertices(seed: int = 0, objectives: int = 100, grid=ORACLE_GRID) -> CheckResult:
    rng = np.random.default_rng(seed)

    def run():
        worst = 0.0
        for K, w, b in grid:
            spec = _spec(K, w, b)
            for _ in range(objectives):
                _, s = worst_case_weighted_sum(spec, rng.random(K))
                worst = max(worst, float(np.max(np.abs(s.delta - np.round(s.delta)))))
        return worst

    worst, t = _timed(run)
    ok = worst <= 1e-9 and t < 5.0
    return CheckResult("A1", "binary optimal vertices", ok, worst, 1e-9, t, f"{len(grid) * objectives} LPs")


def check_oracle_bruteforce(seed: int = 1, objectives: int = 100, grid=ORACLE_GRID) -> CheckResult:
    rng = np.random.default_rng(seed)

    def run():
        worst = 0.0
        for K, w, b in grid:
            spec = _spec(K, w, b)
            S = enumerate_binary_scenarios(spec).astype(float)
            for _ in range(objectives):
                c = rng.random(K)
                v, _ = worst_case_weighted_sum(spec, c)
                worst = max(worst, abs(v - float(np.max(S @ c))))
        return worst

    worst, t = _timed(run)
    ok = worst <= 1e-10 and t < 10.0
    return CheckResult("A2", "oracle equals enumeration", ok, worst, 1e-10, t)


def check_discretization(seed: int = 2, instances: int = 50, refinements=(2, 4, 8)) -> CheckResult:
    rng = np.random.default_rng(seed)

    def run():
        worst = 0.0
        for _ in range(instances):
            K = int(rng.integers(1, 7))
            inst = random_instance(rng, K)
            x = MarketDecision(rng.uniform(0, 2, K), rng.uniform(0, 2, K))
            for N in refinements:
                fine = refine_subgrid(inst.u_hard, N)
                for k in range(K + 1):
                    a = worst_case_max_soc(x, 20.0, inst, inst.u_hard, k)
                    b = worst_case_max_soc(x, 20.0, inst, fine, k * N)
                    c = worst_case_min_soc(x, 20.0, inst, inst.u_hard, k)
                    e = worst_case_min_soc(x, 20.0, inst, fine, k * N)
                    worst = max(worst, abs(a - b), abs(c - e))
        return worst

    worst, t = _timed(run)
    return CheckResult("A3", "lossless discretization", worst <= 1e-8, worst, 1e-8, t)


# ------------------------------------------------------------------ the LP


def _exhaustive_violation(decision: MarketDecision, inst: ProblemInstance) -> float:
    """Largest SoC or power violation over all signed binary vertices of D_K."""
    mags = enumerate_binary_scenarios(inst.u_hard).astype(float)
    K = inst.K
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=K)))
    deltas = (mags[:, None, :] * signs[None, :, :]).reshape(-1, K)
    b, prof = inst.battery, inst.profile
    worst = 0.0
    for y0 in (inst.y0_hard.lo, inst.y0_hard.hi):
        y = soc_trajectory(decision, deltas, y0, inst)
        worst = max(worst, float(np.max(y - b.y_max)), float(np.max(b.y_min - y)))
    g = decision.x_b + deltas * decision.x_r
    worst = max(worst, float(np.max(g - prof.ybar_plus)), float(np.max(-prof.ybar_minus - g)))
    return max(worst, 0.0)


def _block_gap(day, inst: ProblemInstance) -> float:
    """Largest gap between polished dual-block values and oracle worst cases."""
    dec, b, dt = day.decision, inst.battery, inst.dt
    up = b.eta_plus * dec.x_r
    down = min_soc_slopes(dec, b.eta_plus, b.eta_minus)
    gap = 0.0
    for chk in day.blocks:
        if chk.family == "soc_max":
            ref = dt * worst_case_weighted_sum(inst.u_hard, up, chk.k)[0]
        elif chk.family == "soc_min":
            ref = dt * worst_case_weighted_sum(inst.u_hard, down, chk.k)[0]
        elif chk.family == "term_max":
            ref = dt * worst_case_weighted_sum(inst.u_soft, up)[0]
        else:
            ref = dt * worst_case_weighted_sum(inst.u_soft, down)[0]
        gap = max(gap, abs(chk.polished - ref))
    return gap


def _grid_gap(obj: float, inst: ProblemInstance, per_axis: int) -> float:
    """How far the LP optimum exceeds the best feasible constant grid decision."""
    prof = inst.profile
    xb_axis = np.linspace(0.0, float(np.max(prof.ybar_plus)), per_axis)
    xr_axis = np.linspace(0.0, float(np.max(prof.ybar_plus)), per_axis)
    excess = 0.0
    for xb, xr in itertools.product(xb_axis, xr_axis):
        home = prof.ybar_plus > 0
        dec = MarketDecision(np.where(home, xb, 0.0), np.where(home, xr, 0.0))
        if np.any(dec.x_b + dec.x_r > prof.ybar_plus) or np.any(dec.x_r - dec.x_b > prof.ybar_minus):
            continue
        if not verify_robust_feasibility(dec, inst).feasible(1e-9):
            continue
        excess = max(excess, obj - robust_objective(dec, inst))
    return excess


def check_lp_equivalence(seed: int = 3, instances: int = 25, per_axis: int = 20, settings: SolveSettings | None = None, mutate=None) -> list[CheckResult]:
    """Dual tightness, exhaustive feasibility and optimality against a grid.

    Args:
        mutate: optional ``LPModel -> LPModel`` applied after assembly; used to
            make sure the tightness check notices a broken formulation.
    """
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    gap_blocks = gap_feas = gap_grid = 0.0
    bad = []
    for i in range(instances):
        K = int(rng.integers(1, 7))
        inst = random_instance(rng, K)
        model = assemble_lp(inst)
        if mutate is not None:
            model = mutate(model)
        res = solve(model, settings)
        day = extract_decision(model, res, inst, polish=True, settings=settings)
        if not day.optimal:
            bad.append(f"instance {i}: {day.status}")
            continue
        gap_blocks = max(gap_blocks, _block_gap(day, inst))
        rep = verify_robust_feasibility(day.decision, inst)
        gap_feas = max(gap_feas, rep.max_violation, _exhaustive_violation(day.decision, inst))
        gap_grid = max(gap_grid, _grid_gap(day.objective, inst, per_axis))
    t = time.perf_counter() - t0
    note = "; ".join(bad)
    return [
        CheckResult("A4i", "dual blocks match oracles", not bad and gap_blocks <= 1e-8, gap_blocks, 1e-8, t, note),
        CheckResult("A4ii", "robust feasibility by enumeration", not bad and gap_feas <= 1e-6, gap_feas, 1e-6, 0.0, note),
        CheckResult("A4iii", "LP optimum below feasible grid points", not bad and gap_grid <= 1e-9, gap_grid, 1e-9, 0.0, note),
    ]


def flip_slope_sign(model: LPModel) -> LPModel:
    """Mutation fixture: wrong sign of the loss term in the discharge slope rows."""
    A = model.A.tolil(copy=True)
    xb = model.var_index["x_b"]
    for k, r in enumerate(model.con_index["epi_b"]):
        A[r, xb[k]] = -A[r, xb[k]]
    return LPModel(model.c, A.tocsr(), model.sense, model.rhs, model.lo, model.hi, model.c0, model.var_names, model.con_names, model.var_index, model.con_index, model.name)


def check_sizes(Ks=(1, 2, 3, 4, 5, 6, 7, 8, 48)) -> CheckResult:
    t0 = time.perf_counter()
    bad = []
    for K in Ks:
        inst = nominal_instance() if K == 48 else random_instance(np.random.default_rng(K), K)
        rep = size_report(assemble_lp(inst))
        if not rep.ok:
            bad.append(f"K={K}: {rep.variables}/{rep.constraints} vs {rep.formula_variables}/{rep.formula_constraints}")
        if K == 48 and (size_formulas(48) != (9553, 12244) or rep.dual_block_variables != 9408):
            bad.append(f"K=48 dual blocks {rep.dual_block_variables}")
    return CheckResult("A5", "size formulas", not bad, float(len(bad)), 0.0, time.perf_counter() - t0, "; ".join(bad))


def check_variance(k_max: int = 12) -> CheckResult:
    t0 = time.perf_counter()
    bad = []
    for K in range(1, k_max + 1):
        for w in range(1, K + 1):
            for b in range(1, w + 1):
                rep = check_variance_bound(_spec(K, w, b))
                if not rep.ok:
                    bad.append(f"K={K} w={w} b={b}: {rep.max_observed} > {rep.bound}")
    for K, beta in ((8, 1.0), (12, 2.5), (48, 0.5)):
        v, delta = budget_set_max_variance(K, 0.5, beta)
        if abs(v - beta / (K * 0.5)) > 1e-12 or np.any(np.abs(delta - np.round(delta)) > 1e-9):
            bad.append(f"budget set K={K} beta={beta}: {v}")
    nd = NominalDefaults()
    if abs(variance_bound(nd.u_hard()) - 5 / 24) > 1e-15 or abs(variance_bound(nd.u_soft()) - 1 / 48) > 1e-15:
        bad.append("nominal bounds differ from 5/24 and 1/48")
    return CheckResult("A6", "variance bound", not bad, float(len(bad)), 1e-12, time.perf_counter() - t0, "; ".join(bad))


# -------------------------------------------------------------- backtests


@dataclass
class BacktestChecks:
    results: list = field(default_factory=list)
    ledger: object = None


def _robust_stress(ledger, clock: SimClock, traces: int, rng: np.random.Generator) -> tuple[int, int]:
    """Violation events of each day's bids under adversarial and random traces."""
    events = runs = 0
    for rec in ledger.records:
        spec = rec.train.u_hard
        vertices = adversarial_scenarios(rec.decision, rec.train)
        adv = np.vstack([adversarial_trace(v, s, clock) for v in vertices for s in (1.0, -1.0)])
        rnd = random_in_set_traces(spec, traces, rng, clock)
        X = np.vstack([adv, rnd])
        for y0 in (rec.train.y0_hard.lo, rec.train.y0_hard.hi):
            res = simulate_batch(rec.decision, X, rec.test, ledger.policy, y0, clock)
            events += int(res.violations.sum())
            runs += X.shape[0]
    return events, runs


def _weak_violation(dataset, nd: NominalDefaults, clock: SimClock, settings, backend) -> tuple[bool, int]:
    """Search days for a trace in D but not in the soft set that breaks weak bids."""
    from .sim import ScenarioVariant

    weak = ScenarioVariant("weak_robust_penalty")
    train_nd = weak.defaults(nd, "train")
    start = SoCInterval.point(nd.y_star)
    hard = nd.u_hard()
    soft = nd.u_soft()
    for i in range(dataset.n_days):
        train = day_instance(dataset, i, train_nd, nd.target(), start, start)
        test = day_instance(dataset, i, nd, nd.target(), start, start)
        day = solve_day(train, settings=settings, backend=backend)
        rows = []
        for v in adversarial_scenarios(day.decision, test, hard):
            if contains(hard, v) and not contains(soft, v):
                rows += [adversarial_trace(v, s, clock) for s in (1.0, -1.0)]
        if not rows:
            continue
        res = simulate_batch(day.decision, np.vstack(rows), test, PenaltyPolicy(), nd.y_star, clock)
        if res.any_violation:
            return True, i
    return False, -1


def check_backtests(seed: int = 2019, days: int = 30, traces: int = 100, settings: SolveSettings | None = None, backend: str = "bundled", defaults: NominalDefaults | None = None) -> BacktestChecks:
    """Zero-violation stress test (A7) and restriction ordering (A8)."""
    nd = defaults or NominalDefaults()
    t0 = time.perf_counter()
    ds = synth_dataset(SynthSpec(seed=seed, days=days), nd)
    clock = SimClock(ds.step_s, ds.dt)
    ledger = run_backtest(ds, "nominal", PenaltyPolicy(), defaults=nd, settings=settings, backend=backend)
    in_set = all(trace_in_set(ds.delta[i], nd.u_hard()) for i in range(ds.n_days))
    events, runs = _robust_stress(ledger, clock, traces, np.random.default_rng(seed))
    events += int(ledger.frame["violations"].sum())
    found, day = _weak_violation(ds, nd, clock, settings, backend)
    t = time.perf_counter() - t0
    ok = events == 0 and found and in_set and t < 120.0
    detail = f"{runs} stressed runs, {events} events; weak-robust violation on day {day}" if found else f"{runs} stressed runs, {events} events; no weak-robust violation found"
    out = BacktestChecks(ledger=ledger)
    out.results.append(CheckResult("A7", "zero-violation backtest", ok, float(events), 0.0, t, detail))
    df = ledger.frame
    excess = float(np.max(df["lp_objective"] - df["lp_objective_noreg"]))
    strict = int(np.sum(df["lp_objective"] < df["lp_objective_noreg"] - 1e-9))
    out.results.append(CheckResult("A8", "restriction ordering", excess <= 1e-9 and strict >= 1, excess, 1e-9, 0.0, f"strictly better on {strict}/{len(df)} days"))
    return out


# ----------------------------------------------------------- sensitivities


def planning_value(dataset, nd: NominalDefaults, days=None, settings=None, backend="bundled") -> float:
    """Sum over days of (objective without regulation - objective with it)."""
    start = SoCInterval.point(nd.y_star)
    total = 0.0
    for i in range(dataset.n_days) if days is None else days:
        inst = day_instance(dataset, i, nd, nd.target(), start, start)
        a = solve_day(inst, True, settings, backend)
        b = solve_day(inst, False, settings, backend)
        if not (a.optimal and b.optimal):
            raise RuntimeError(f"day {i}: LP status {a.status}/{b.status}")
        total += b.objective - a.objective
    return total


SENSITIVITY_AXES = {
    "charger_kw": (1.0, 2.5, 4.0, 5.5, 7.0),
    "battery_kwh": (30.0, 35.0, 40.0, 45.0, 50.0),
    "regulation_cycle_h": (5.0, 4.0, 2.5, 1.5, 1.0),
}


def apply_axis(nd: NominalDefaults, axis: str, value: float) -> NominalDefaults:
    if axis == "charger_kw":
        return nd.replace(ybar_plus=value, ybar_minus=value)
    if axis == "battery_kwh":
        return nd.replace(y_max=value)
    if axis == "regulation_cycle_h":
        return nd.replace(Gamma=value)
    raise ValueError(f"unknown axis {axis!r}")


def check_sensitivity(seed: int = 2019, days: int = 3, settings=None, backend="bundled") -> CheckResult:
    t0 = time.perf_counter()
    nd = NominalDefaults()
    bad = []
    values = {}
    for axis, grid in SENSITIVITY_AXES.items():
        vals = []
        for v in grid:
            cfg = apply_axis(nd, axis, v)
            ds = synth_dataset(SynthSpec(seed=seed, days=days), cfg)
            vals.append(planning_value(ds, cfg, settings=settings, backend=backend))
        values[axis] = vals
        # the cycle axis is ordered by increasing activation ratio
        diffs = np.diff(vals) * (-1.0 if axis == "regulation_cycle_h" else 1.0)
        if np.any(diffs < -1e-9):
            bad.append(f"{axis}: " + ", ".join(f"{x:.4f}" for x in vals))
    detail = "; ".join(bad) if bad else "; ".join(f"{a}: {v[0]:.3f}->{v[-1]:.3f}" for a, v in values.items())
    return CheckResult("A9", "monotone sensitivities", not bad, float(len(bad)), 1e-9, time.perf_counter() - t0, detail)


def check_performance(settings: SolveSettings | None = None) -> list[CheckResult]:
    inst = nominal_instance()
    model, t_asm = _timed(lambda: assemble_lp(inst))
    res, t_solve = _timed(lambda: solve(model, settings))
    day = extract_decision(model, res, inst)
    clock = SimClock(dt=inst.dt)
    rng = np.random.default_rng(0)
    trace = random_in_set_traces(inst.u_hard, 1, rng, clock)[0]
    from .sim import simulate_day

    t_sim = min(_timed(lambda: simulate_day(day.decision, trace, inst, y_start=inst.target.y_star))[1] for _ in range(3))
    return [
        CheckResult("A11a", "K=48 assembly time", t_asm < 1.0, t_asm, 1.0, t_asm),
        CheckResult("A11b", "K=48 bundled solve time", res.optimal and t_solve < 10.0, t_solve, 10.0, t_solve, f"{res.iterations} iterations"),
        CheckResult("A11c", "one simulated day", t_sim < 0.05, t_sim, 0.05, t_sim),
    ]


def run_all(seed: int = 2019, days: int = 30, traces: int = 100, instances: int = 25, settings=None, backend="bundled") -> list[CheckResult]:
    out = [check_binary_vertices(), check_oracle_bruteforce(), check_discretization()]
    out += check_lp_equivalence(instances=instances, settings=settings)
    out += [check_sizes(), check_variance()]
    out += check_backtests(seed, days, traces, settings, backend).results
    out.append(check_sensitivity(seed, settings=settings, backend=backend))
    out += check_performance(settings)
    return out
