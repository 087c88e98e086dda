"""Backtesting at 10 s resolution.

Every day is planned at noon of the previous day from the state of charge
observed then, then simulated step by step against the realized deviation
trace.  Flows that would push the battery out of [y_min, y_max] or beyond
the charger limits are clipped; clipped regulation energy is penalized or
leads to market exclusion, and driving energy that cannot be supplied is
bought at ``p_y``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .data import Dataset, NominalDefaults
from .model import (
    BatteryParams,
    MarketDecision,
    PeriodProfile,
    ProblemInstance,
    SoCInterval,
    TerminalTarget,
    as_multiple,
)
from .robustlp import solve_day
from .solver import SolveSettings
from .uncertainty import UncertaintyWindowSpec, contains, min_soc_slopes, worst_case_max_soc, worst_case_min_soc, worst_case_weighted_sum

log = logging.getLogger(__name__)

FINANCIAL, EXCLUSION = "financial", "exclusion"
VARIANTS = ("nominal", "lossless", "misspecified_losses", "weak_robust_exclusion", "weak_robust_penalty", "unidirectional")
LEDGER_COLUMNS = ["date", "cost", "revenue", "penalty", "shortfall_kwh", "violations", "soc_end", "excluded", "cum_value"]


@dataclass(frozen=True)
class PenaltyPolicy:
    """Sanctions for non-delivery.

    Args:
        mode: "financial" charges ``k_pen * p_a`` per undelivered kWh;
            "exclusion" bans the owner from the reserve market instead.
        k_pen: multiple of the availability price.
        p_y: price of driving energy the battery could not supply (EUR/kWh).
        event_tol: energy (kWh) below which a clipped interval is not an event.
    """

    mode: str = FINANCIAL
    k_pen: float = 5.0
    p_y: float = 7.50
    event_tol: float = 1e-6

    def __post_init__(self):
        if self.mode not in (FINANCIAL, EXCLUSION):
            raise ValueError(f"unknown penalty mode {self.mode!r}")
        if self.k_pen < 0 or self.p_y < 0 or self.event_tol < 0:
            raise ValueError("penalty parameters must be nonnegative")


@dataclass(frozen=True)
class SimClock:
    step_s: float = 10.0
    dt: float = 0.5

    def __post_init__(self):
        if self.step_s <= 0:
            raise ValueError("step must be positive")
        as_multiple(self.dt * 3600, self.step_s, "trading interval in seconds")

    @property
    def steps_per_interval(self) -> int:
        return as_multiple(self.dt * 3600, self.step_s, "trading interval in seconds")

    @property
    def h(self) -> float:
        """Step length in hours."""
        return self.step_s / 3600.0


@dataclass(frozen=True)
class ScenarioVariant:
    """One of the six backtest scenarios.

    The variant decides which instance the bids are trained on, which
    battery the simulation uses and, for the weak-robust pair, the sanction.
    """

    tag: str = "nominal"

    def __post_init__(self):
        if self.tag not in VARIANTS:
            raise ValueError(f"unknown variant {self.tag!r}; choose from {VARIANTS}")

    @property
    def weak(self) -> bool:
        return self.tag.startswith("weak_robust")

    def policy(self, policy: PenaltyPolicy) -> PenaltyPolicy:
        if self.tag == "weak_robust_exclusion":
            return replace(policy, mode=EXCLUSION)
        if self.tag == "weak_robust_penalty":
            return replace(policy, mode=FINANCIAL)
        return policy

    def defaults(self, nd: NominalDefaults, stage: str) -> NominalDefaults:
        """Parameters for the "train" or "test" stage."""
        if self.tag == "unidirectional":
            nd = nd.replace(ybar_minus=0.0)
        lossless = self.tag == "lossless" or (self.tag == "misspecified_losses" and stage == "train")
        if lossless:
            nd = nd.replace(eta_plus=1.0, eta_minus=1.0)
        if self.weak and stage == "train":
            nd = nd.replace(gamma=nd.gamma_hat, Gamma=nd.Gamma_hat)
        return nd


@dataclass(frozen=True)
class CalibrationGrid:
    """Candidate terminal targets.

    ``y_star_fracs`` are fractions of the usable range; the target in kWh is
    ``y_min + frac * (y_max - y_min)``.
    """

    p_star_values: tuple = tuple((1 + k) / 20 for k in range(1, 6))
    y_star_fracs: tuple = tuple(0.5 + l / 30 for l in range(6))

    def __post_init__(self):
        if not self.p_star_values or not self.y_star_fracs:
            raise ValueError("calibration grid must not be empty")
        if any(p < 0 for p in self.p_star_values) or any(not 0 <= f <= 1 for f in self.y_star_fracs):
            raise ValueError("p_star must be nonnegative and fractions within [0, 1]")

    def targets(self, battery: BatteryParams) -> list:
        span = battery.y_max - battery.y_min
        return [TerminalTarget(battery.y_min + f * span, p) for p in self.p_star_values for f in self.y_star_fracs]


# ------------------------------------------------------------------ one day


@dataclass
class DayResult:
    """Settlement of one simulated day."""

    energy_cost: float
    revenue: float
    penalty: float
    shortfall_kwh: float
    shortfall_cost: float
    undelivered_kwh: float
    unabsorbed_kwh: float
    violations: int
    soc_end: float
    soc_noon: float

    @property
    def cost(self) -> float:
        return self.energy_cost - self.revenue + self.penalty + self.shortfall_cost


@dataclass
class BatchResult:
    """Per-trace outcome arrays of ``simulate_batch``."""

    undelivered_kwh: np.ndarray
    shortfall_kwh: np.ndarray
    unabsorbed_kwh: np.ndarray
    violations: np.ndarray
    soc: np.ndarray
    revenue: np.ndarray
    penalty: np.ndarray
    energy_cost: float
    clipped: np.ndarray

    @property
    def any_violation(self) -> bool:
        return bool(np.any(self.violations > 0))


def _expand(v, n):
    return np.repeat(np.asarray(v, dtype=float), n)


def _step_loop(xb, xr, delta, d, yp, ym, bat: BatteryParams, h: float, y0: float, n: int):
    """Exact clipped simulation of one trace; returns per-step arrays."""
    ep, em = bat.eta_plus, bat.eta_minus
    lo, hi = bat.y_min, bat.y_max
    N = len(delta)
    soc = np.empty(N + 1)
    und = np.zeros(N)
    short = np.zeros(N)
    unabs = np.zeros(N)
    soc[0] = y = float(y0)
    delta = delta.tolist()
    for k in range(len(xb)):
        b, r, dk, up, dn = float(xb[k]), float(xr[k]), float(d[k]), float(yp[k]), float(ym[k])
        base = k * n
        for i in range(base, base + n):
            reg = delta[i] * r
            g = b + reg
            gc = up if g > up else (-dn if g < -dn else g)
            y_new = y + h * ((ep * gc if gc >= 0 else gc / em) - dk)
            if y_new > hi:
                gc = ((hi - y) / h + dk) / ep
                y_new = hi
            elif y_new < lo:
                if gc < 0:
                    g0 = ((lo - y) / h + dk) * em
                    if g0 <= 0:
                        gc = g0
                        y_new = lo
                    else:
                        gc = 0.0
                        y_new = y - h * dk
                if y_new < lo:
                    short[i] = lo - y_new
                    y_new = lo
            miss = abs(g - gc) * h
            if miss > 0:
                r_miss = min(miss, abs(reg) * h)
                und[i] = r_miss
                unabs[i] = miss - r_miss
            soc[i + 1] = y = y_new
    return soc, und, short, unabs


def simulate_batch(decision: MarketDecision, traces, inst: ProblemInstance, policy: PenaltyPolicy | None = None, y_start=None, clock: SimClock | None = None, p_d=None) -> BatchResult:
    """Simulate one day for a stack of traces.

    Args:
        decision: the day's bids.
        traces: (S, steps) normalized deviations.
        inst: instance providing battery, profile and prices for the test stage.
        policy: sanctions.
        y_start: scalar or (S,) initial SoC; defaults to the target SoC.
        clock: simulation resolution.
        p_d: optional delivery prices per step (or per interval).

    Traces that never touch a SoC or power limit are settled in closed form;
    the others go through the exact step loop.
    """
    policy = policy or PenaltyPolicy()
    clock = clock or SimClock(dt=inst.dt)
    n, K, h = clock.steps_per_interval, inst.K, clock.h
    X = np.atleast_2d(np.asarray(traces, dtype=float))
    S = X.shape[0]
    if X.shape[1] != n * K or decision.K != K:
        raise ValueError(f"trace length {X.shape[1]} or decision length {decision.K} does not match K={K} at {n} steps per interval")
    bat, prof, pr = inst.battery, inst.profile, inst.prices
    y0 = np.broadcast_to(np.asarray(inst.target.y_star if y_start is None else y_start, dtype=float), (S,)).copy()
    if np.any(y0 < bat.y_min - 1e-9) or np.any(y0 > bat.y_max + 1e-9):
        raise ValueError("initial SoC outside the battery range")
    y0 = np.clip(y0, bat.y_min, bat.y_max)
    xb, xr = _expand(decision.x_b, n), _expand(decision.x_r, n)
    d, yp, ym = _expand(prof.d, n), _expand(prof.ybar_plus, n), _expand(prof.ybar_minus, n)
    g = xb + X * xr
    net = np.where(g >= 0, bat.eta_plus * g, g / bat.eta_minus) - d
    soc = np.concatenate([y0[:, None], y0[:, None] + h * np.cumsum(net, axis=1)], axis=1)
    ok = np.all((soc >= bat.y_min) & (soc <= bat.y_max), axis=1) & np.all((g <= yp) & (g >= -ym), axis=1)
    und = np.zeros((S, n * K))
    short = np.zeros((S, n * K))
    unabs = np.zeros((S, n * K))
    for s in np.flatnonzero(~ok):
        soc[s], und[s], short[s], unabs[s] = _step_loop(decision.x_b, decision.x_r, X[s], prof.d, prof.ybar_plus, prof.ybar_minus, bat, h, y0[s], n)
    p_a = _expand(pr.p_a, n)
    per_step = h * p_a * xr
    p_d = pr.p_d if p_d is None else p_d
    if p_d is not None:
        p_d = np.asarray(p_d, dtype=float)
        p_d = _expand(p_d, n) if p_d.shape[0] == K else p_d
        if p_d.shape[0] != n * K:
            raise ValueError("delivery prices must be given per interval or per step")
        revenue = per_step.sum() + (h * X * xr * p_d).sum(axis=1)
    else:
        revenue = np.full(S, per_step.sum())
    k_pen = policy.k_pen if policy.mode == FINANCIAL else 0.0
    penalty = (und * (k_pen * p_a)).sum(axis=1)
    if np.any(soc < bat.y_min) or np.any(soc > bat.y_max):
        raise AssertionError("simulated SoC left the battery range")
    und_k = und.reshape(S, K, n).sum(axis=2)
    short_k = short.reshape(S, K, n).sum(axis=2)
    events = ((und_k > policy.event_tol) | (short_k > policy.event_tol)).sum(axis=1)
    energy_cost = float(inst.dt * np.sum(pr.p_b * decision.x_b))
    return BatchResult(und.sum(axis=1), short.sum(axis=1), unabs.sum(axis=1), events, soc, revenue, penalty, energy_cost, ~ok)


def simulate_day(decision: MarketDecision, trace, inst: ProblemInstance, policy: PenaltyPolicy | None = None, y_start: float | None = None, clock: SimClock | None = None) -> tuple[DayResult, np.ndarray]:
    """Simulate one day against one trace.

    Returns:
        The settlement and the SoC at every step boundary (steps + 1 values).
    """
    policy = policy or PenaltyPolicy()
    res = simulate_batch(decision, np.asarray(trace, float)[None, :], inst, policy, y_start, clock)
    soc = res.soc[0]
    noon = (soc.shape[0] - 1) // 2
    day = DayResult(
        energy_cost=res.energy_cost,
        revenue=float(res.revenue[0]),
        penalty=float(res.penalty[0]),
        shortfall_kwh=float(res.shortfall_kwh[0]),
        shortfall_cost=float(policy.p_y * res.shortfall_kwh[0]),
        undelivered_kwh=float(res.undelivered_kwh[0]),
        unabsorbed_kwh=float(res.unabsorbed_kwh[0]),
        violations=int(res.violations[0]),
        soc_end=float(soc[-1]),
        soc_noon=float(soc[noon]),
    )
    return day, soc


def step_settlement(decision: MarketDecision, trace, inst: ProblemInstance, policy: PenaltyPolicy | None = None, y_start: float | None = None, clock: SimClock | None = None) -> np.ndarray:
    """Cash flow of every step (EUR, positive = cost) through the exact loop.

    Summing it reproduces ``DayResult.cost``; used to audit the closed-form
    settlement.
    """
    policy = policy or PenaltyPolicy()
    clock = clock or SimClock(dt=inst.dt)
    n, h = clock.steps_per_interval, clock.h
    bat, prof, pr = inst.battery, inst.profile, inst.prices
    y0 = inst.target.y_star if y_start is None else y_start
    X = np.asarray(trace, dtype=float)
    _, und, short, _ = _step_loop(decision.x_b, decision.x_r, X, prof.d, prof.ybar_plus, prof.ybar_minus, bat, h, y0, n)
    xb, xr, p_a, p_b = (_expand(v, n) for v in (decision.x_b, decision.x_r, pr.p_a, pr.p_b))
    k_pen = policy.k_pen if policy.mode == FINANCIAL else 0.0
    flow = h * p_b * xb - h * p_a * xr + k_pen * p_a * und + policy.p_y * short
    if pr.p_d is not None:
        p_d = np.asarray(pr.p_d, float)
        p_d = _expand(p_d, n) if p_d.shape[0] == inst.K else p_d
        flow -= h * X * xr * p_d
    return flow


# ------------------------------------------------------------ uncertainty use


def adversarial_trace(scenario, sign=1.0, clock: SimClock | None = None) -> np.ndarray:
    """Lift a per-interval scenario to a piecewise-constant sample trace.

    Args:
        scenario: per-interval values, usually a binary vertex.
        sign: +1, -1 or one sign per interval.
        clock: sampling resolution.
    """
    clock = clock or SimClock()
    s = np.asarray(getattr(scenario, "delta", scenario), dtype=float)
    sign = np.broadcast_to(np.asarray(sign, dtype=float), s.shape)
    if np.any(np.abs(sign) != 1):
        raise ValueError("signs must be +1 or -1")
    return np.repeat(s * sign, clock.steps_per_interval)


def adversarial_scenarios(decision: MarketDecision, inst: ProblemInstance, spec: UncertaintyWindowSpec | None = None) -> np.ndarray:
    """Worst-case vertices of ``spec`` for the day's SoC bounds.

    For every prefix length k the maximizer of the upper SoC bound and of the
    lower SoC loss are computed; duplicates are removed.  Rows are binary and
    unsigned; apply both signs when lifting them.
    """
    spec = spec or inst.u_hard
    b = inst.battery
    up = b.eta_plus * decision.x_r
    down = min_soc_slopes(decision, b.eta_plus, b.eta_minus)
    rows = []
    for weights in (up, down):
        for k in range(1, inst.K + 1):
            if np.any(weights[:k] > 0):
                rows.append(np.round(worst_case_weighted_sum(spec, weights, k)[1].delta))
    if not rows:
        return np.zeros((1, inst.K))
    return np.unique(np.array(rows), axis=0)


def random_in_set_traces(spec: UncertaintyWindowSpec, count: int, rng: np.random.Generator, clock: SimClock | None = None) -> np.ndarray:
    """Random traces whose |delta| interval averages lie in ``spec``.

    Interval budgets are drawn from a few shapes (dense, sparse, bursty),
    scaled into the set, and filled with noisy samples of random sign.
    """
    clock = clock or SimClock(dt=spec.dt)
    n, K = clock.steps_per_interval, spec.K
    out = np.empty((count, n * K))
    for j in range(count):
        kind = j % 3
        if kind == 0:
            u = rng.random(K)
        elif kind == 1:
            u = (rng.random(K) < 0.2) * 1.0
        else:
            u = rng.beta(0.3, 0.3, K)
        ws = np.convolve(u, np.ones(spec.w))[:K]
        a = u * min(1.0, spec.b / max(ws.max(), 1e-12))
        mag = np.clip(np.repeat(a, n) * (1.0 + 0.5 * rng.standard_normal(n * K)), 0.0, 1.0).reshape(K, n)
        mean = mag.mean(axis=1)
        scale = np.where(mean > a, a / np.maximum(mean, 1e-300), 1.0)
        mag *= scale[:, None]
        block = rng.integers(1, n + 1)
        signs = np.repeat(rng.choice([-1.0, 1.0], size=-(-n * K // block)), block)[: n * K]
        out[j] = mag.reshape(-1) * signs
    return out


def trace_in_set(trace, spec: UncertaintyWindowSpec, tol: float = 1e-9) -> bool:
    """Interval averages of |delta| inside ``spec``."""
    a = np.abs(np.asarray(trace, float)).reshape(spec.K, -1).mean(axis=1)
    return contains(spec, a, tol)


# ------------------------------------------------------------ day chaining


def _tail_instance(inst: ProblemInstance, K_tail: int) -> ProblemInstance:
    start = inst.K - K_tail
    pr = inst.prices
    return ProblemInstance(
        battery=inst.battery,
        horizon=replace(inst.horizon, T=K_tail * inst.dt, K=K_tail),
        profile=inst.profile.slice(start, inst.K),
        prices=type(pr)(pr.p_b[start:], pr.p_r[start:], pr.p_a[start:]),
        target=inst.target,
        y0_hard=inst.y0_hard,
        y0_soft=inst.y0_soft,
        u_hard=inst.u_hard.restrict(K_tail),
        u_soft=inst.u_soft.restrict(K_tail),
        grid=inst.grid,
    )


def noon_intervals(y_noon: float, committed: MarketDecision, inst: ProblemInstance) -> tuple[SoCInterval, SoCInterval]:
    """SoC intervals at the end of the day given the SoC at noon.

    Args:
        y_noon: observed SoC when the next day is planned.
        committed: bids for the rest of the current day.
        inst: the current day's instance; its last ``committed.K`` intervals
            are the tail.

    The window sets are re-anchored at noon, clamped to the tail length, and
    the resulting envelope is clipped to the battery range.
    """
    K_tail = committed.K
    if not 1 <= K_tail <= inst.K:
        raise ValueError(f"tail of {K_tail} intervals does not fit a day of {inst.K}")
    tail = _tail_instance(inst, K_tail)
    b = inst.battery
    out = []
    for spec in (tail.u_hard, tail.u_soft):
        lo = worst_case_min_soc(committed, y_noon, tail, spec, K_tail)
        hi = worst_case_max_soc(committed, y_noon, tail, spec, K_tail)
        lo, hi = min(max(lo, b.y_min), b.y_max), max(min(hi, b.y_max), b.y_min)
        out.append(SoCInterval(lo, max(lo, hi)))
    return out[0], out[1]


@dataclass
class DayRecord:
    """Everything that happened on one backtest day."""

    date: object
    train: ProblemInstance
    test: ProblemInstance
    decision: MarketDecision
    baseline_decision: MarketDecision
    y_start: float
    baseline_y_start: float
    result: DayResult
    baseline: DayResult
    lp_objective: float
    lp_objective_noreg: float
    excluded: bool


@dataclass
class BacktestLedger:
    """Per-day strategy and baseline settlements with the value-of-V2G series."""

    variant: str
    policy: PenaltyPolicy
    target: TerminalTarget
    records: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def frame(self) -> pd.DataFrame:
        rows = []
        for r in self.records:
            rows.append({
                "date": r.date,
                "cost": r.result.cost,
                "revenue": r.result.revenue,
                "penalty": r.result.penalty,
                "shortfall_kwh": r.result.shortfall_kwh,
                "violations": r.result.violations,
                "soc_end": r.result.soc_end,
                "excluded": r.excluded,
                "baseline_cost": r.baseline.cost,
                "energy_cost": r.result.energy_cost,
                "undelivered_kwh": r.result.undelivered_kwh,
                "lp_objective": r.lp_objective,
                "lp_objective_noreg": r.lp_objective_noreg,
                "y0_lo": r.train.y0_hard.lo,
                "y0_hi": r.train.y0_hard.hi,
                "x_r_kwh": float(r.train.dt * r.decision.x_r.sum()),
            })
        cols = LEDGER_COLUMNS[:-1] + ["baseline_cost", "energy_cost", "undelivered_kwh", "lp_objective", "lp_objective_noreg", "y0_lo", "y0_hi", "x_r_kwh"]
        df = pd.DataFrame(rows, columns=cols)
        df.insert(len(LEDGER_COLUMNS) - 1, "cum_value", (df["baseline_cost"] - df["cost"]).cumsum())
        return df

    @property
    def value(self) -> float:
        """Total value of V2G: baseline cost minus strategy cost."""
        df = self.frame
        return float(df["cum_value"].iloc[-1]) if len(df) else 0.0

    @property
    def first_violation(self):
        for i, r in enumerate(self.records):
            if r.result.violations > 0:
                return i
        return None

    def to_csv(self, path, header: str | None = None):
        """Fixed-column ledger export."""
        _write_csv(self.frame[LEDGER_COLUMNS], path, header)

    def long_frame(self) -> pd.DataFrame:
        df = self.frame
        out = pd.DataFrame({"variant": self.variant, "date": df["date"], "series": "cum_value", "value": df["cum_value"]})
        return out


def _write_csv(df: pd.DataFrame, path, header: str | None = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        df.to_csv(fh, index=False)


def day_instance(ds: Dataset, i: int, nd: NominalDefaults, target: TerminalTarget, y0_hard: SoCInterval, y0_soft: SoCInterval) -> ProblemInstance:
    prof = PeriodProfile(ds.d[i], np.full(ds.K, nd.ybar_plus), np.full(ds.K, nd.ybar_minus))
    b = nd.battery()
    clip = lambda iv: SoCInterval(min(max(iv.lo, b.y_min), b.y_max), min(max(iv.hi, b.y_min), b.y_max))
    return ProblemInstance(
        battery=b, horizon=nd.horizon(), profile=prof, prices=ds.prices(i), target=target,
        y0_hard=clip(y0_hard), y0_soft=clip(y0_soft), u_hard=nd.u_hard(), u_soft=nd.u_soft(), grid=nd.grid(),
    )


def _solve(inst, regulation, settings, backend):
    day = solve_day(inst, regulation=regulation, settings=settings, backend=backend)
    if not day.optimal:
        raise RuntimeError(f"day LP ended with status {day.status}")
    return day


def run_backtest(dataset: Dataset, variant: ScenarioVariant | str = "nominal", policy: PenaltyPolicy | None = None, target: TerminalTarget | None = None, defaults: NominalDefaults | None = None, settings: SolveSettings | None = None, backend: str = "bundled") -> BacktestLedger:
    """Chain the days of ``dataset`` with planning at noon.

    Args:
        dataset: consecutive days; incomplete days are skipped for both the
            strategy and the baseline, and the chain restarts at the target.
        variant: scenario tag or ``ScenarioVariant``.
        policy: sanctions; the weak-robust variants override the mode.
        target: terminal target (defaults to the nominal one).
        defaults: nominal parameters the variant modifies.
        settings, backend: LP solver options.
    """
    variant = ScenarioVariant(variant) if isinstance(variant, str) else variant
    nd = defaults or NominalDefaults()
    if dataset.K != nd.K:
        raise ValueError(f"dataset has K={dataset.K} but parameters give K={nd.K}")
    policy = variant.policy(policy or PenaltyPolicy())
    target = target or nd.target()
    train_nd, test_nd = variant.defaults(nd, "train"), variant.defaults(nd, "test")
    clock = SimClock(dataset.step_s, dataset.dt)
    ledger = BacktestLedger(variant.tag, policy, target)
    K_tail = dataset.K // 2
    start = SoCInterval.point(target.y_star)
    state = None  # (y_start, y0_hard, y0_soft) for the strategy and the baseline
    excluded = False
    for i in range(dataset.n_days):
        if not dataset.complete[i]:
            ledger.skipped.append(dataset.dates[i])
            log.info("skipping incomplete day %s", dataset.dates[i])
            state = None
            continue
        if state is None:
            state = {"s": (target.y_star, start, start), "b": (target.y_star, start, start)}
        y_s, hard_s, soft_s = state["s"]
        y_b, hard_b, soft_b = state["b"]
        train = day_instance(dataset, i, train_nd, target, hard_s, soft_s)
        test = day_instance(dataset, i, test_nd, target, hard_s, soft_s)
        noreg = _solve(train, False, settings, backend)
        plan = noreg if excluded else _solve(train, True, settings, backend)
        train_b = day_instance(dataset, i, train_nd, target, hard_b, soft_b)
        test_b = day_instance(dataset, i, test_nd, target, hard_b, soft_b)
        base = _solve(train_b, False, settings, backend)
        if plan.objective > noreg.objective + 1e-9 * max(1.0, abs(noreg.objective)):
            log.warning("%s: regulation LP objective %.12g exceeds the restricted one %.12g", dataset.dates[i], plan.objective, noreg.objective)
        res, soc = simulate_day(plan.decision, dataset.delta[i], test, policy, y_s, clock)
        res_b, soc_b = simulate_day(base.decision, dataset.delta[i], test_b, policy, y_b, clock)
        ledger.records.append(DayRecord(
            dataset.dates[i], train, test, plan.decision, base.decision, y_s, y_b,
            res, res_b, plan.objective, noreg.objective, excluded,
        ))
        if policy.mode == EXCLUSION and res.violations > 0:
            excluded = True
        tail = plan.decision.slice(dataset.K - K_tail, dataset.K)
        hard, soft = noon_intervals(res.soc_noon, tail, train)
        tail_b = base.decision.slice(dataset.K - K_tail, dataset.K)
        hard_b2, soft_b2 = noon_intervals(res_b.soc_noon, tail_b, train_b)
        state = {"s": (res.soc_end, hard, soft), "b": (res_b.soc_end, hard_b2, soft_b2)}
    return ledger


# ---------------------------------------------------------------- calibration


@dataclass
class CalibrationResult:
    p_star: float
    y_star: float
    table: pd.DataFrame

    def regret(self, test_table: pd.DataFrame) -> float:
        """|profit(test optimum) - profit(train choice)| / mean of the two, on test data."""
        best = test_table.loc[test_table["value"].idxmax()]
        chosen = test_table[(np.isclose(test_table["p_star"], self.p_star)) & (np.isclose(test_table["y_star"], self.y_star))]
        if chosen.empty:
            raise ValueError("the calibrated point is not in the test table")
        a, b = float(best["value"]), float(chosen["value"].iloc[0])
        mean = (a + b) / 2
        return abs(a - b) / abs(mean) if mean else 0.0


def _grid_point(args):
    dataset, variant, policy, target, nd, settings, backend = args
    ledger = run_backtest(dataset, variant, policy, target, nd, settings, backend)
    return target.p_star, target.y_star, ledger.value


def calibrate(train_dataset: Dataset, grid: CalibrationGrid | None = None, variant: ScenarioVariant | str = "nominal", policy: PenaltyPolicy | None = None, defaults: NominalDefaults | None = None, settings: SolveSettings | None = None, backend: str = "bundled", workers: int = 1) -> CalibrationResult:
    """Backtest every grid point and keep the most profitable one.

    Ties go to the smaller ``p_star`` and then the smaller ``y_star``.
    """
    grid = grid or CalibrationGrid()
    nd = defaults or NominalDefaults()
    jobs = [(train_dataset, variant, policy, t, nd, settings, backend) for t in grid.targets(nd.battery())]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_grid_point, jobs))
    else:
        rows = [_grid_point(j) for j in jobs]
    table = pd.DataFrame(rows, columns=["p_star", "y_star", "value"])
    p_star, y_star = select_best(table)
    return CalibrationResult(p_star, y_star, table)


def select_best(table: pd.DataFrame) -> tuple[float, float]:
    """Most profitable grid point; ties go to smaller p_star, then smaller y_star."""
    order = table.sort_values(["value", "p_star", "y_star"], ascending=[False, True, True], kind="mergesort")
    best = order.iloc[0]
    return float(best["p_star"]), float(best["y_star"])


def y_star_from_fraction(frac: float, battery: BatteryParams) -> float:
    return battery.y_min + frac * (battery.y_max - battery.y_min)


def fraction_from_y_star(y_star: float, battery: BatteryParams) -> float:
    return (y_star - battery.y_min) / (battery.y_max - battery.y_min)
