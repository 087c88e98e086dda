import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_v2g.model import (
    BatteryParams,
    GridConfig,
    HorizonSpec,
    MarketDecision,
    PeriodProfile,
    PriceProfile,
    SoCInterval,
    TerminalTarget,
    as_multiple,
    delta_from_frequency,
    expected_cost,
    net_flow_split,
    soc_trajectory,
)
from conftest import make_instance

floats = st.floats(-5, 5, allow_nan=False)
nonneg = st.floats(0, 5, allow_nan=False)


@pytest.mark.parametrize("f, expected", [(50.25, 1.0), (50.0, 0.0), (49.9, -0.5), (49.0, -1.0)])
def test_delta_from_frequency(f, expected):
    assert delta_from_frequency(f, GridConfig(50.0, 0.2)) == pytest.approx(expected, abs=1e-12)


def test_delta_rejects_nonfinite():
    with pytest.raises(ValueError):
        delta_from_frequency(np.array([50.0, np.nan]), GridConfig())


@pytest.mark.parametrize("args, expected", [((2, 1, -1), (1, 0)), ((0, 1, -1), (0, 1)), ((1, 1, 0), (1, 0))])
def test_net_flow_split_examples(args, expected):
    assert net_flow_split(*args) == pytest.approx(expected)


@given(nonneg, nonneg, st.floats(-1, 1))
def test_net_flow_split_properties(xb, xr, d):
    c, dis = net_flow_split(xb, xr, d)
    assert c * dis == 0
    assert c - dis == pytest.approx(xb + d * xr, abs=1e-12)


def test_soc_trajectory_examples():
    inst = make_instance(K=1, dt=0.5, y0=10.0)
    y = soc_trajectory(MarketDecision([1.0], [0.0]), [0.0], 10.0, inst)
    assert y == pytest.approx([10.0, 10.5])
    inst = make_instance(K=1, dt=0.5, eta=(0.85, 0.85), y0=10.0)
    assert soc_trajectory(MarketDecision([2.0], [1.0]), [-1.0], 10.0, inst) == pytest.approx([10.0, 10.425])
    assert soc_trajectory(MarketDecision([0.0], [1.0]), [-1.0], 10.0, inst) == pytest.approx([10.0, 10 - 0.5 / 0.85])


def test_soc_trajectory_dimension_mismatch():
    inst = make_instance(K=2)
    with pytest.raises(ValueError):
        soc_trajectory(MarketDecision([1.0], [0.0]), [0.0], 10.0, inst)


@given(st.floats(-10, 10), st.floats(0.5, 1.0), st.floats(0.5, 1.0))
def test_min_form_equals_split_form(n, ep, em):
    two_branch = ep * max(n, 0) - max(-n, 0) / em
    assert min(ep * n, n / em) == pytest.approx(two_branch, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_soc_concavity_and_monotonicity(seed):
    rng = np.random.default_rng(seed)
    K = 4
    inst = make_instance(K=K, dt=0.5, eta=(0.85, 0.9), y0=50.0)
    a = MarketDecision(rng.uniform(0, 3, K), rng.uniform(0, 3, K))
    b = MarketDecision(rng.uniform(0, 3, K), rng.uniform(0, 3, K))
    da, db = rng.uniform(-1, 1, K), rng.uniform(-1, 1, K)
    t = rng.uniform()
    mix = MarketDecision(t * a.x_b + (1 - t) * b.x_b, t * a.x_r + (1 - t) * b.x_r)
    # concave jointly in (x, delta) along a segment with delta fixed
    lhs = soc_trajectory(mix, da, 50.0, inst)
    rhs = t * soc_trajectory(a, da, 50.0, inst) + (1 - t) * soc_trajectory(b, da, 50.0, inst)
    assert np.all(lhs >= rhs - 1e-9)
    # concave in delta
    lhs = soc_trajectory(a, t * da + (1 - t) * db, 50.0, inst)
    rhs = t * soc_trajectory(a, da, 50.0, inst) + (1 - t) * soc_trajectory(a, db, 50.0, inst)
    assert np.all(lhs >= rhs - 1e-9)
    # nondecreasing in x_b and delta, affine in y0
    more = MarketDecision(a.x_b + rng.uniform(0, 1, K), a.x_r)
    assert np.all(soc_trajectory(more, da, 50.0, inst) >= soc_trajectory(a, da, 50.0, inst) - 1e-12)
    assert np.all(soc_trajectory(a, np.maximum(da, db), 50.0, inst) >= soc_trajectory(a, da, 50.0, inst) - 1e-12)
    assert soc_trajectory(a, da, 52.0, inst) - soc_trajectory(a, da, 50.0, inst) == pytest.approx(np.full(K + 1, 2.0))


def test_expected_cost_examples():
    h = HorizonSpec.from_dt(24, 0.5)
    ones, zeros = np.ones(48), np.zeros(48)
    assert expected_cost(MarketDecision(ones, zeros), PriceProfile.flat(48, 0.14, 0.0), h) == pytest.approx(3.36)
    assert expected_cost(MarketDecision(zeros, ones), PriceProfile.flat(48, 0.14, 0.008), h) == pytest.approx(-0.192)
    assert expected_cost(MarketDecision.zeros(48), PriceProfile.flat(48, 0.14, 0.008), h) == 0.0


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1), floats, floats)
def test_expected_cost_linear(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    h = HorizonSpec.from_dt(3, 0.5)
    p = PriceProfile(rng.random(6), rng.random(6), rng.random(6))
    x, y = rng.random((2, 6)), rng.random((2, 6))
    # linearity holds on the raw vectors; evaluate through the formula
    f = lambda v: expected_cost(MarketDecision(np.abs(v[0]), np.abs(v[1])), p, h)
    xa = np.abs(alpha) * x + np.abs(beta) * y
    assert f(xa) == pytest.approx(abs(alpha) * f(x) + abs(beta) * f(y), rel=1e-9, abs=1e-9)


def test_type_invariants():
    with pytest.raises(ValueError):
        BatteryParams(10, 5)
    with pytest.raises(ValueError):
        BatteryParams(0, 10, eta_plus=1.2)
    with pytest.raises(ValueError):
        GridConfig(50.0, 0.0)
    with pytest.raises(ValueError):
        HorizonSpec(24, 0.5, 47)
    with pytest.raises(ValueError):
        HorizonSpec.from_dt(24, 0.7)
    with pytest.raises(ValueError):
        TerminalTarget(20, -1)
    with pytest.raises(ValueError):
        SoCInterval(5, 4)
    with pytest.raises(ValueError):
        MarketDecision([-1.0], [0.0])
    with pytest.raises(ValueError):
        PriceProfile([0.1], [0.0], [-0.1])
    assert BatteryParams(0, 1, 0.85, 0.85).delta_eta == pytest.approx(1 / 0.85 - 0.85)


def test_driving_disconnects():
    prof = PeriodProfile([0.0, 2.0], [7.0, 7.0], [7.0, 7.0])
    assert list(prof.ybar_plus) == [7.0, 0.0] and list(prof.ybar_minus) == [7.0, 0.0]


def test_instance_rejects_soft_set_larger_than_hard():
    with pytest.raises(ValueError):
        make_instance(K=4, dt=0.5, w=2, b=1, w_s=1, b_s=1)


def test_as_multiple():
    assert as_multiple(24, 0.5) == 48
    with pytest.raises(ValueError):
        as_multiple(1.0, 0.3)
