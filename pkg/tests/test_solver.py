import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_v2g.lp import GE, LE, LPBuilder, LPModel
from robust_v2g.solver import (
    INFEASIBLE,
    ITERATION_LIMIT,
    OPTIMAL,
    UNBOUNDED,
    SolveSettings,
    certify,
    solve,
)
from robust_v2g.uncertainty import UncertaintyWindowSpec, oracle_lp
from lp_oracle import reference


def one_var(cost, lo=0.0, hi=np.inf, rows=()):
    b = LPBuilder()
    x = b.add_var("x", lo, hi, cost)
    for sense, rhs in rows:
        b.add_row(f"r{len(b._rhs)}", [x], [1.0], sense, rhs)
    return b.build()


def test_examples():
    res = solve(one_var(1.0, rows=[(GE, 1.0)]))
    assert res.status == OPTIMAL and res.objective == pytest.approx(1.0)
    res = solve(one_var(-1.0, hi=1.0))
    assert res.status == OPTIMAL and res.primal[0] == pytest.approx(1.0)
    assert solve(one_var(-1.0)).status == UNBOUNDED
    assert solve(one_var(1.0, hi=1.0, rows=[(GE, 2.0)])).status == INFEASIBLE


def random_lp(rng, m, n, kind):
    A = rng.normal(size=(m, n)) * (rng.random((m, n)) < 0.6)
    x0 = rng.uniform(0, 2, n)
    slack = rng.uniform(0, 1, m)
    sense = rng.choice(["L", "G", "E"], m, p=[0.45, 0.35, 0.2])
    rhs = A @ x0 + np.where(sense == "L", slack, np.where(sense == "G", -slack, 0.0))
    lo = np.where(rng.random(n) < 0.2, -np.inf, 0.0)
    hi = np.where(rng.random(n) < 0.3, 3.0, np.inf)
    c = rng.normal(size=n)
    if kind == "bounded":
        lo, hi = np.maximum(lo, -5.0), np.minimum(hi, 5.0)
    if kind == "infeasible":
        r = rng.integers(m)
        A = np.vstack([A, A[r]])
        sense = np.append(sense, "G" if sense[r] != "G" else "L")
        rhs = np.append(rhs, rhs[r] + 10.0 if sense[-1] == "G" else rhs[r] - 10.0)
        if sense[r] == "E":
            sense[-1] = "G"
            rhs[-1] = rhs[r] + 10.0
    import scipy.sparse as sp

    return LPModel(c, sp.csr_matrix(A), np.asarray(sense, dtype="<U1"), rhs, lo, np.maximum(hi, lo))


@settings(max_examples=120, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["free", "bounded", "infeasible"]), st.sampled_from(["dual", "primal"]))
def test_agrees_with_reference(seed, kind, method):
    rng = np.random.default_rng(seed)
    model = random_lp(rng, int(rng.integers(1, 9)), int(rng.integers(1, 9)), kind)
    ref_status, ref_obj = reference(model)
    res = solve(model, SolveSettings(method=method))
    if ref_status == "other":
        return
    assert res.status == ref_status
    if ref_status == OPTIMAL:
        assert res.objective == pytest.approx(ref_obj, rel=1e-7, abs=1e-7)
        cert = certify(model, res)
        assert cert.ok, cert.failures
        assert model.violation(res.primal) <= 1e-8


def test_certify_flags_perturbation_and_refuses_infeasible():
    b = LPBuilder()
    x = b.add_block("x", 2, cost=[1.0, 2.0])
    b.add_row("r", x, [1.0, 1.0], GE, 1.0)
    model = b.build()
    res = solve(model)
    cert = certify(model, res)
    assert cert.ok and cert.gap <= 1e-7
    bad = type(res)(res.status, res.primal - np.array([1e-3, 0.0]), res.dual, res.objective)
    cert = certify(model, bad)
    assert not cert.ok and cert.primal_residual > 1e-8
    with pytest.raises(ValueError):
        certify(model, solve(one_var(1.0, hi=1.0, rows=[(GE, 2.0)])))


def test_deterministic(nominal):
    from robust_v2g.robustlp import assemble_lp

    model = assemble_lp(nominal)
    a, b = solve(model), solve(model)
    assert a.iterations == b.iterations
    assert np.array_equal(a.primal, b.primal) and np.array_equal(a.dual, b.dual)
    assert a.max_basis_residual <= 1e-8


def test_oracle_lps_have_integral_vertices():
    rng = np.random.default_rng(0)
    for K, w, b in [(6, 2, 1), (8, 3, 2), (10, 4, 1)]:
        spec = UncertaintyWindowSpec(b * 0.5, w * 0.5, 0.5, K)
        for _ in range(20):
            res = solve(oracle_lp(spec, rng.random(K)))
            assert np.max(np.abs(res.primal - np.round(res.primal))) <= 1e-9


def test_iteration_limit():
    rng = np.random.default_rng(3)
    model = random_lp(rng, 8, 8, "bounded")
    res = solve(model, SolveSettings(max_iters=1))
    assert res.status in (ITERATION_LIMIT, OPTIMAL)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolveSettings(feas_tol=0.0)
    with pytest.raises(ValueError):
        SolveSettings(method="barrier")
    with pytest.raises(ValueError):
        SolveSettings(pivot_rule="devex")


def test_external_backend_matches(nominal):
    from robust_v2g.robustlp import assemble_lp

    model = assemble_lp(nominal)
    a, b = solve(model), solve(model, backend="external")
    assert b.status == OPTIMAL
    assert a.objective == pytest.approx(b.objective, rel=1e-8)
    with pytest.raises(ValueError):
        solve(model, backend="cplex")


def test_nominal_certifies(nominal):
    from robust_v2g.robustlp import assemble_lp

    model = assemble_lp(nominal)
    res = solve(model)
    assert res.status == OPTIMAL
    assert certify(model, res).ok
