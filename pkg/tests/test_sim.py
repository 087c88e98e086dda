import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from robust_v2g.data import Dataset, NominalDefaults, SynthSpec, synth_dataset
from robust_v2g.model import MarketDecision, PriceProfile, SoCInterval, TerminalTarget
from robust_v2g.robustlp import solve_day
from robust_v2g.sim import (
    LEDGER_COLUMNS,
    CalibrationGrid,
    CalibrationResult,
    PenaltyPolicy,
    ScenarioVariant,
    SimClock,
    adversarial_scenarios,
    adversarial_trace,
    noon_intervals,
    random_in_set_traces,
    run_backtest,
    select_best,
    simulate_batch,
    simulate_day,
    step_settlement,
    trace_in_set,
    y_star_from_fraction,
)
from robust_v2g.uncertainty import UncertaintyWindowSpec, enumerate_binary_scenarios
from conftest import make_instance

CLOCK = SimClock(10.0, 0.5)
N = CLOCK.steps_per_interval


def reference_sim(xb, xr, trace, inst, y0, k_pen, p_y, h=10 / 3600):
    """Plain per-step simulator written from the settlement rules, for cross-checking."""
    b, prof, pr = inst.battery, inst.profile, inst.prices
    y, cost, und, short = y0, 0.0, 0.0, 0.0
    soc = [y]
    for i, delta in enumerate(trace):
        k = i // N
        want = xb[k] + delta * xr[k]
        g = min(max(want, -prof.ybar_minus[k]), prof.ybar_plus[k])
        # largest feasible move toward the wanted flow
        def nxt(f):
            return y + h * ((b.eta_plus * f if f >= 0 else f / b.eta_minus) - prof.d[k])
        if nxt(g) > b.y_max:
            g = ((b.y_max - y) / h + prof.d[k]) / b.eta_plus
        elif nxt(g) < b.y_min and g < 0:
            g = min(((b.y_min - y) / h + prof.d[k]) * b.eta_minus, 0.0)
        y_new = nxt(g)
        if y_new < b.y_min:
            short += b.y_min - y_new
            cost += p_y * (b.y_min - y_new)
            y_new = b.y_min
        miss = min(abs(want - g) * h, abs(delta * xr[k]) * h)
        und += miss
        cost += h * (pr.p_b[k] * xb[k] - pr.p_a[k] * xr[k]) + k_pen * pr.p_a[k] * miss
        y = y_new
        soc.append(y)
    return cost, und, short, np.array(soc)


def test_no_regulation_costs_purchases_only():
    inst = make_instance(K=4, dt=0.5, y=(0, 100), y0=50.0, p_b=[0.1, 0.2, 0.3, 0.4], p_r=0.01)
    x = MarketDecision([1.0, 2.0, 0.0, 1.0], np.zeros(4))
    trace = np.random.default_rng(0).uniform(-1, 1, 4 * N)
    res, soc = simulate_day(x, trace, inst, y_start=50.0, clock=CLOCK)
    assert res.cost == pytest.approx(0.5 * (0.1 + 0.4 + 0.4))
    assert res.penalty == 0 and res.violations == 0 and res.revenue == 0
    assert soc.shape == (4 * N + 1,)


def test_full_battery_penalty_example():
    inst = make_instance(K=1, dt=0.5, y=(0, 40), y0=40.0, p_b=0.1, p_r=0.01)
    res, soc = simulate_day(MarketDecision([0.0], [1.0]), np.ones(N), inst, PenaltyPolicy(), 40.0, CLOCK)
    assert res.undelivered_kwh == pytest.approx(0.5)
    assert res.penalty == pytest.approx(0.025)
    assert res.violations == 1
    assert np.all(soc == 40.0)
    excl, _ = simulate_day(MarketDecision([0.0], [1.0]), np.ones(N), inst, PenaltyPolicy("exclusion"), 40.0, CLOCK)
    assert excl.penalty == 0.0 and excl.violations == 1


def test_driving_shortfall_is_bought():
    inst = make_instance(K=2, dt=0.5, y=(10, 40), y0=10.5, d=[2.0, 0.0], p_b=0.1)
    res, soc = simulate_day(MarketDecision.zeros(2), np.zeros(2 * N), inst, PenaltyPolicy(p_y=0.75), 10.5, CLOCK)
    assert res.shortfall_kwh == pytest.approx(0.5)
    assert res.shortfall_cost == pytest.approx(0.375)
    assert soc.min() == 10.0


def test_length_and_range_errors():
    inst = make_instance(K=2, dt=0.5)
    with pytest.raises(ValueError):
        simulate_day(MarketDecision.zeros(2), np.zeros(N), inst, clock=CLOCK)
    with pytest.raises(ValueError):
        simulate_day(MarketDecision.zeros(2), np.zeros(2 * N), inst, y_start=500.0, clock=CLOCK)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_matches_reference_and_conserves(seed):
    rng = np.random.default_rng(seed)
    K = 3
    inst = make_instance(K=K, dt=0.5, eta=(rng.uniform(0.7, 1), rng.uniform(0.7, 1)), y=(10.0, 14.0), y0=12.0,
                         d=np.where(rng.random(K) < 0.3, rng.uniform(0, 6, K), 0.0), charger=7.0,
                         p_b=rng.uniform(0.1, 0.3, K), p_r=rng.uniform(0, 0.05, K))
    x = MarketDecision(rng.uniform(0, 4, K), rng.uniform(0, 4, K))
    trace = np.clip(rng.normal(0, 0.6, K * N), -1, 1)
    pol = PenaltyPolicy(k_pen=5.0, p_y=7.5)
    y0 = rng.uniform(10, 14)
    res, soc = simulate_day(x, trace, inst, pol, y0, CLOCK)
    cost, und, short, ref_soc = reference_sim(x.x_b, x.x_r, trace, inst, y0, 5.0, 7.5)
    assert np.allclose(soc, ref_soc, atol=1e-9)
    assert res.undelivered_kwh == pytest.approx(und, abs=1e-9)
    assert res.shortfall_kwh == pytest.approx(short, abs=1e-9)
    assert res.cost == pytest.approx(cost, abs=1e-9)
    assert abs(step_settlement(x, trace, inst, pol, y0, CLOCK).sum() - res.cost) <= 1e-9
    assert soc.min() >= 10.0 and soc.max() <= 14.0


def test_delivery_price_settlement():
    K = 2
    inst = make_instance(K=K, dt=0.5, y=(0, 100), y0=50.0, p_b=0.1, p_r=0.01)
    p_d = np.full(K * N, 0.2)
    inst = inst.replace(prices=PriceProfile(inst.prices.p_b, inst.prices.p_r, inst.prices.p_a, p_d))
    x = MarketDecision([0.0, 0.0], [2.0, 2.0])
    trace = np.full(K * N, 0.5)
    res, _ = simulate_day(x, trace, inst, y_start=50.0, clock=CLOCK)
    assert res.revenue == pytest.approx(1.0 * 0.01 * 2 + 1.0 * 0.5 * 2 * 0.2)
    assert step_settlement(x, trace, inst, y_start=50.0, clock=CLOCK).sum() == pytest.approx(res.cost, abs=1e-12)


def test_adversarial_trace_examples():
    assert np.all(adversarial_trace(np.zeros(3), 1, CLOCK) == 0)
    t = adversarial_trace([1, 0, 1], 1, CLOCK)
    assert t.shape == (540,) and np.all(t[:180] == 1) and np.all(t[180:360] == 0) and np.all(t[360:] == 1)
    assert np.all(adversarial_trace([1, 1], [-1, 1], CLOCK)[:180] == -1)
    with pytest.raises(ValueError):
        adversarial_trace([1], 2.0, CLOCK)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_lift_round_trip(K, w, seed):
    spec = UncertaintyWindowSpec(0.5, min(w, K) * 0.5, 0.5, K)
    S = enumerate_binary_scenarios(spec)
    s = S[np.random.default_rng(seed).integers(len(S))]
    t = adversarial_trace(s, 1, CLOCK)
    assert np.array_equal(t.reshape(K, N).mean(axis=1), s)
    assert trace_in_set(t, spec)


def test_random_traces_in_set():
    spec = UncertaintyWindowSpec(0.5, 2.5, 0.5, 48)
    X = random_in_set_traces(spec, 12, np.random.default_rng(1), CLOCK)
    assert X.shape == (12, 48 * N)
    assert all(trace_in_set(x, spec) for x in X)
    assert np.max(np.abs(X)) <= 1


def test_noon_intervals_examples(instance_factory):
    inst = instance_factory(K=4, dt=3.0, y=(0, 40), y0=10.0, w=1, b=1)
    hard, soft = noon_intervals(20.0, MarketDecision.zeros(2), inst)
    assert hard == SoCInterval(20.0, 20.0) and soft == SoCInterval(20.0, 20.0)
    hard, _ = noon_intervals(20.0, MarketDecision([1.0, 1.0], [0.0, 0.0]), inst)
    assert hard.lo == pytest.approx(26.0) and hard.hi == pytest.approx(26.0)
    hard, _ = noon_intervals(35.0, MarketDecision([1.0, 1.0], [0.0, 0.0]), inst)
    assert hard.hi == 40.0


def test_noon_interval_nesting(nominal):
    day = solve_day(nominal)
    tail = day.decision.slice(24, 48)
    hard, soft = noon_intervals(25.0, tail, nominal)
    assert hard.lo <= soft.lo <= soft.hi <= hard.hi
    assert hard.hi - hard.lo > 0


def test_noon_tail_length_error(nominal):
    with pytest.raises(ValueError):
        noon_intervals(25.0, MarketDecision.zeros(60), nominal)


def test_delivery_guarantee_nominal(nominal):
    day = solve_day(nominal)
    vertices = adversarial_scenarios(day.decision, nominal)
    X = np.vstack([adversarial_trace(v, s, CLOCK) for v in vertices for s in (1, -1)] + [random_in_set_traces(nominal.u_hard, 20, np.random.default_rng(0), CLOCK)])
    for y0 in (nominal.y0_hard.lo, nominal.y0_hard.hi):
        res = simulate_batch(day.decision, X, nominal, PenaltyPolicy(), y0, CLOCK)
        assert res.violations.sum() == 0
        assert res.undelivered_kwh.max() <= 1e-6


def flat_dataset(days=3, p_a=0.01):
    d0 = synth_dataset(SynthSpec(days=days, prices="flat", p_a=p_a))
    return Dataset(d0.dates, np.zeros_like(d0.delta), d0.p_b, d0.p_a, d0.d, d0.complete)


def test_zero_deviation_value_closed_form():
    ds = flat_dataset()
    ledger = run_backtest(ds, "nominal")
    df = ledger.frame
    for r, (_, row) in zip(ledger.records, df.iterrows()):
        dt = ds.dt
        closed = dt * np.sum(r.train.prices.p_r * r.decision.x_r) + dt * np.sum(r.train.prices.p_b * (r.baseline_decision.x_b - r.decision.x_b))
        assert row["baseline_cost"] - row["cost"] == pytest.approx(closed, abs=1e-9)
    assert list(ledger.frame[LEDGER_COLUMNS].columns) == LEDGER_COLUMNS


def test_ledger_restriction_ordering_and_csv(small_dataset, tmp_path):
    ledger = run_backtest(small_dataset)
    df = ledger.frame
    assert np.all(df["lp_objective"] <= df["lp_objective_noreg"] + 1e-9)
    assert df["violations"].sum() == 0
    ledger.to_csv(tmp_path / "l.csv", header="test")
    text = (tmp_path / "l.csv").read_text().splitlines()
    assert text[0] == "# test" and text[1] == ",".join(LEDGER_COLUMNS)
    assert set(ledger.long_frame().columns) == {"variant", "date", "series", "value"}


def test_unidirectional_not_better(small_dataset):
    bi = run_backtest(small_dataset, "nominal")
    uni = run_backtest(small_dataset, "unidirectional")
    assert uni.value <= bi.value + 1e-9
    assert all(np.all(r.decision.x_r <= r.decision.x_b + 1e-9) for r in uni.records)


def test_exclusion_flat_after_violation():
    ds = synth_dataset(SynthSpec(days=7))
    ds = ds.with_trace(1, np.ones(ds.delta.shape[1]))
    ledger = run_backtest(ds, "weak_robust_exclusion")
    v = ledger.first_violation
    assert v == 1
    df = ledger.frame
    assert all(np.all(r.decision.x_r == 0) for r in ledger.records[v + 1:])
    assert df["excluded"].iloc[v + 1:].all() and not df["excluded"].iloc[: v + 1].any()
    inc = df["cum_value"].diff().to_numpy()
    assert np.all(np.abs(inc[v + 3:]) <= 1e-9)
    assert df["penalty"].sum() == 0


def test_incomplete_days_skipped(small_dataset):
    flags = np.array(small_dataset.complete)
    flags[1] = False
    ds = Dataset(small_dataset.dates, small_dataset.delta, small_dataset.p_b, small_dataset.p_a, small_dataset.d, flags)
    ledger = run_backtest(ds)
    assert ledger.skipped == [ds.dates[1]]
    assert len(ledger.records) == 2
    # the chain restarts at the target after the gap
    assert ledger.records[1].train.y0_hard == SoCInterval.point(NominalDefaults().y_star)


def test_variant_views(defaults):
    mis = ScenarioVariant("misspecified_losses")
    assert mis.defaults(defaults, "train").eta_plus == 1.0 and mis.defaults(defaults, "test").eta_plus == 0.85
    weak = ScenarioVariant("weak_robust_penalty")
    assert weak.defaults(defaults, "train").Gamma == 24.0 and weak.policy(PenaltyPolicy("exclusion")).mode == "financial"
    assert ScenarioVariant("weak_robust_exclusion").policy(PenaltyPolicy()).mode == "exclusion"
    assert ScenarioVariant("unidirectional").defaults(defaults, "test").ybar_minus == 0.0
    with pytest.raises(ValueError):
        ScenarioVariant("greedy")


def test_calibration_grid_and_selection():
    g = CalibrationGrid()
    assert len(g.targets(NominalDefaults().battery())) == 30
    assert y_star_from_fraction(0.5 + 2 / 30, NominalDefaults().battery()) == pytest.approx(27.0)
    table = pd.DataFrame({"p_star": [0.2, 0.1, 0.1, 0.3], "y_star": [25.0, 27.0, 26.0, 20.0], "value": [5.0, 5.0, 5.0, 1.0]})
    assert select_best(table) == (0.1, 26.0)
    res = CalibrationResult(0.1, 26.0, table)
    test = pd.DataFrame({"p_star": [0.1, 0.2], "y_star": [26.0, 25.0], "value": [4.0, 6.0]})
    assert res.regret(test) == pytest.approx(2.0 / 5.0)


def test_calibrate_single_point():
    from robust_v2g.sim import calibrate

    ds = synth_dataset(SynthSpec(days=1))
    res = calibrate(ds, CalibrationGrid((0.15,), (0.5,)))
    assert (res.p_star, res.y_star) == (0.15, 25.0)
    assert len(res.table) == 1


def test_policy_validation():
    with pytest.raises(ValueError):
        PenaltyPolicy("jail")
    with pytest.raises(ValueError):
        PenaltyPolicy(k_pen=-1)
    with pytest.raises(ValueError):
        SimClock(7.0, 0.5)
