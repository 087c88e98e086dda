"""Assembly of the tractable robust bidding LP and mapping of its solutions.

Variable blocks (all 0-based, interval k in the code is interval k+1 of the day):

* ``x_b``, ``x_r``: market decisions, ``m``: worst-case discharge slopes,
  ``z``: terminal deviation epigraph.
* ``Lam_p``, ``Lam_m``, ``The_p``, ``The_m``: K x K dual blocks of the
  per-interval SoC bounds.  Only cells with ``l <= k`` are created; the others
  are reported as -1 in ``var_index``.
* ``lam_p``, ``lam_m``, ``the_p``, ``the_m``: dual vectors of the two
  terminal SoC bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lp import GE, LE, LPBuilder, LPModel
from .model import MarketDecision, ProblemInstance
from .solver import OPTIMAL, SolveResult, SolveSettings, solve
from .uncertainty import worst_case_max_soc, worst_case_min_soc

DUAL_BLOCKS = ("Lam_p", "Lam_m", "The_p", "The_m")
TERMINAL_DUALS = ("lam_p", "lam_m", "the_p", "the_m")


def window_end_index(k: int, l: int, w: int) -> int:
    """Last window (1-based) that still covers interval ``l`` within the first ``k``."""
    if not 1 <= l <= k:
        raise ValueError(f"need 1 <= l <= k, got l={l}, k={k}")
    if w < 1:
        raise ValueError("window length must be positive")
    return min(k, l + w - 1)


def assemble_lp(inst: ProblemInstance, regulation: bool = True) -> LPModel:
    """Build the robust LP for one planning day.

    Args:
        inst: the day's problem data.
        regulation: when False, the reserve bids are fixed at zero.

    Returns:
        An ``LPModel`` whose optimum is the robust bidding strategy.
    """
    K, dt = inst.K, inst.dt
    bat, prof, pr = inst.battery, inst.profile, inst.prices
    ep, em, deta = bat.eta_plus, bat.eta_minus, bat.delta_eta
    gam, w = inst.u_hard.gamma, inst.u_hard.w
    gam_s, w_s = inst.u_soft.gamma, inst.u_soft.w
    d_cum = dt * np.concatenate([[0.0], np.cumsum(prof.d)])

    bld = LPBuilder("robust_day" if regulation else "robust_day_noreg")
    xb = bld.add_block("x_b", K, cost=dt * pr.p_b)
    xr = bld.add_block("x_r", K, hi=np.inf if regulation else 0.0, cost=-dt * pr.p_r)
    m = bld.add_block("m", K, lo=-np.inf)
    z = bld.add_block("z", 1, lo=-np.inf, cost=inst.target.p_star)[0]
    tri = np.tril(np.ones((K, K), dtype=bool))
    Lp = bld.add_block("Lam_p", (K, K), mask=tri)
    Lm = bld.add_block("Lam_m", (K, K), mask=tri)
    Tp = bld.add_block("The_p", (K, K), mask=tri)
    Tm = bld.add_block("The_m", (K, K), mask=tri)
    lp = bld.add_block("lam_p", K)
    lm = bld.add_block("lam_m", K)
    tp = bld.add_block("the_p", K)
    tm = bld.add_block("the_m", K)

    for k in range(K):
        bld.add_row(f"pow_up[{k}]", [xr[k], xb[k]], [1.0, 1.0], LE, prof.ybar_plus[k], family="pow_up")
    for k in range(K):
        bld.add_row(f"pow_dn[{k}]", [xr[k], xb[k]], [1.0, -1.0], LE, prof.ybar_minus[k], family="pow_dn")
    for k in range(K):
        bld.add_row(f"epi_a[{k}]", [m[k], xr[k]], [1.0, -ep], GE, 0.0, family="epi_a")
    for k in range(K):
        bld.add_row(f"epi_b[{k}]", [m[k], xr[k], xb[k]], [1.0, -1.0 / em, deta], GE, 0.0, family="epi_b")

    y0h, y0s = inst.y0_hard, inst.y0_soft
    for k in range(K + 1):
        # row k bounds the SoC after k intervals; block row k-1 holds its duals
        cols = np.concatenate([xb[:k], Lp[k - 1, :k], Tp[k - 1, :k]]) if k else []
        vals = np.concatenate([np.full(k, dt * ep), np.full(k, dt), np.full(k, gam)]) if k else []
        bld.add_row(f"soc_max[{k}]", cols, vals, LE, bat.y_max - y0h.hi + d_cum[k], family="soc_max")
    for k in range(K + 1):
        cols = np.concatenate([xb[:k], Lm[k - 1, :k], Tm[k - 1, :k]]) if k else []
        vals = np.concatenate([np.full(k, dt * ep), np.full(k, -dt), np.full(k, -gam)]) if k else []
        bld.add_row(f"soc_min[{k}]", cols, vals, GE, bat.y_min - y0h.lo + d_cum[k], family="soc_min")

    y_star = inst.target.y_star
    bld.add_row(
        "term_max",
        np.concatenate([xb, lp, tp, [z]]),
        np.concatenate([np.full(K, dt * ep), np.full(K, dt), np.full(K, gam_s), [-1.0]]),
        LE, y_star - y0s.hi + d_cum[K], family="term_max",
    )
    bld.add_row(
        "term_min",
        np.concatenate([xb, lm, tm, [z]]),
        np.concatenate([np.full(K, dt * ep), np.full(K, -dt), np.full(K, -gam_s), [1.0]]),
        GE, y_star - y0s.lo + d_cum[K], family="term_min",
    )

    cov_p = np.full((K, K), -1, dtype=np.int64)
    cov_m = np.full((K, K), -1, dtype=np.int64)
    for k in range(K):
        for l in range(k + 1):
            I = window_end_index(k + 1, l + 1, w)  # 1-based
            th = np.arange(l, I)
            cov_p[k, l] = bld.add_row(
                f"cov_max[{k},{l}]", np.concatenate([[Lp[k, l]], Tp[k, th], [xr[l]]]),
                np.concatenate([[1.0], np.ones(th.size), [-ep]]), GE, 0.0,
            )
    for k in range(K):
        for l in range(k + 1):
            I = window_end_index(k + 1, l + 1, w)
            th = np.arange(l, I)
            cov_m[k, l] = bld.add_row(
                f"cov_min[{k},{l}]", np.concatenate([[Lm[k, l]], Tm[k, th], [m[l]]]),
                np.concatenate([[1.0], np.ones(th.size), [-1.0]]), GE, 0.0,
            )
    bld.con_index["cov_max"] = cov_p
    bld.con_index["cov_min"] = cov_m
    for k in range(K):
        th = np.arange(k, window_end_index(K, k + 1, w_s))
        bld.add_row(f"tcov_max[{k}]", np.concatenate([[lp[k]], tp[th], [xr[k]]]),
                    np.concatenate([[1.0], np.ones(th.size), [-ep]]), GE, 0.0, family="tcov_max")
    for k in range(K):
        th = np.arange(k, window_end_index(K, k + 1, w_s))
        bld.add_row(f"tcov_min[{k}]", np.concatenate([[lm[k]], tm[th], [m[k]]]),
                    np.concatenate([[1.0], np.ones(th.size), [-1.0]]), GE, 0.0, family="tcov_min")
    return bld.build()


def assemble_lp_no_regulation(inst: ProblemInstance) -> LPModel:
    """The same LP with every reserve bid fixed at zero."""
    return assemble_lp(inst, regulation=False)


@dataclass(frozen=True)
class SizeReport:
    K: int
    variables: int
    constraints: int
    dual_block_variables: int
    materialized_variables: int
    materialized_rows: int
    formula_variables: int
    formula_constraints: int

    @property
    def ok(self) -> bool:
        return self.variables == self.formula_variables and self.constraints == self.formula_constraints


def size_formulas(K: int) -> tuple[int, int]:
    return 4 * K * K + 7 * K + 1, 5 * K * K + 15 * K + 4


def size_report(model: LPModel) -> SizeReport:
    """Count variables and constraints of an assembled model at full multiplicity.

    Unmaterialized upper-triangular cells of the dual blocks count as
    variables.  Constraints are the explicit rows plus one nonnegativity
    constraint per cell of x_b, x_r and of every dual block or vector.
    """
    vi = model.var_index
    K = vi["x_b"].shape[0]
    variables = sum(int(np.prod(v.shape)) for v in vi.values())
    nonneg = ("x_b", "x_r") + DUAL_BLOCKS + TERMINAL_DUALS
    dual_cells = sum(int(np.prod(vi[b].shape)) for b in DUAL_BLOCKS + TERMINAL_DUALS)
    constraints = model.n_cons + sum(int(np.prod(vi[b].shape)) for b in nonneg)
    fv, fc = size_formulas(K)
    return SizeReport(K, variables, constraints, dual_cells, model.n_vars, model.n_cons, fv, fc)


@dataclass
class BlockCheck:
    """Dual-block value of one robust SoC row against the oracle."""

    family: str
    k: int
    raw: float
    polished: float


@dataclass
class SolvedDay:
    status: str
    decision: MarketDecision | None
    m: np.ndarray | None = None
    m_closed: np.ndarray | None = None
    z: float = np.nan
    objective: float = np.nan
    duals: dict = field(default_factory=dict)
    polished: dict | None = None
    polished_objective: float = np.nan
    blocks: list = field(default_factory=list)
    result: SolveResult | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _block_values(model: LPModel, x: np.ndarray, row: int, cols: np.ndarray) -> float:
    """Contribution of ``cols`` to ``row``, signed so that larger is more conservative."""
    a = model.A.getrow(row).toarray().ravel()
    sign = 1.0 if model.sense[row] == LE else -1.0
    return float(sign * a[cols] @ x[cols])


def _polish_block(model: LPModel, x: np.ndarray, row: int, cols: np.ndarray, cover_rows: np.ndarray, settings) -> np.ndarray:
    """Re-solve one dual block for the least conservative value given the other variables."""
    A = model.A.tocsr()
    cols = np.asarray(cols)
    sign = 1.0 if model.sense[row] == LE else -1.0
    obj = sign * A[row, cols].toarray().ravel()
    sub = A[cover_rows][:, cols]
    others = A[cover_rows] @ x - sub @ x[cols]
    rhs = model.rhs[cover_rows] - others
    sub_model = LPModel(
        c=obj, A=sub.tocsr(), sense=model.sense[cover_rows], rhs=rhs,
        lo=model.lo[cols], hi=model.hi[cols],
    )
    res = solve(sub_model, settings)
    if not res.optimal:  # pragma: no cover - the block LP is always feasible
        raise RuntimeError(f"dual block re-solve for row {row} ended with {res.status}")
    return res.primal


def _min_m_from_rows(model: LPModel, x: np.ndarray) -> np.ndarray:
    """Smallest m allowed by the epigraph rows at the given decision."""
    K = model.var_index["m"].shape[0]
    mi = model.var_index["m"]
    out = np.full(K, -np.inf)
    A = model.A.tocsr()
    for fam in ("epi_a", "epi_b"):
        for k, r in enumerate(model.con_index[fam]):
            a = A.getrow(r).toarray().ravel()
            coef = a[mi[k]]
            rest = a @ x - coef * x[mi[k]]
            out[k] = max(out[k], (model.rhs[r] - rest) / coef)
    return out


def polish_solution(model: LPModel, x: np.ndarray, settings: SolveSettings | None = None) -> tuple[np.ndarray, list]:
    """Replace the dual blocks of an optimal point by per-row minimizers.

    A simplex vertex only has to make each robust SoC row hold; where a row
    is slack its dual block may overstate the worst case.  With the market
    decision fixed, each block is re-solved on its own, ``m`` is set to its
    smallest allowed value and ``z`` to the smallest value the terminal rows
    permit.  The result is feasible and no more expensive.
    """
    vi, ci = model.var_index, model.con_index
    x = np.array(x, dtype=float)
    K = vi["x_b"].shape[0]
    x[vi["m"]] = _min_m_from_rows(model, x)
    checks = []
    for fam, lam, the, cov in (("soc_max", "Lam_p", "The_p", "cov_max"), ("soc_min", "Lam_m", "The_m", "cov_min")):
        for k in range(1, K + 1):
            row = ci[fam][k]
            cols = np.concatenate([vi[lam][k - 1, :k], vi[the][k - 1, :k]])
            raw = _block_values(model, x, row, cols)
            x[cols] = _polish_block(model, x, row, cols, ci[cov][k - 1, :k], settings)
            checks.append(BlockCheck(fam, k, raw, _block_values(model, x, row, cols)))
    for fam, lam, the, cov in (("term_max", "lam_p", "the_p", "tcov_max"), ("term_min", "lam_m", "the_m", "tcov_min")):
        row = ci[fam][0]
        cols = np.concatenate([vi[lam], vi[the]])
        raw = _block_values(model, x, row, cols)
        x[cols] = _polish_block(model, x, row, cols, ci[cov], settings)
        checks.append(BlockCheck(fam, K, raw, _block_values(model, x, row, cols)))
    zi = vi["z"][0]
    A = model.A.tocsr()
    z_need = -np.inf
    for fam in ("term_max", "term_min"):
        r = ci[fam][0]
        a = A.getrow(r).toarray().ravel()
        rest = a @ x - a[zi] * x[zi]
        z_need = max(z_need, (model.rhs[r] - rest) / a[zi])
    x[zi] = z_need
    return x, checks


def extract_decision(model: LPModel, result: SolveResult, inst: ProblemInstance | None = None, polish: bool = False, settings: SolveSettings | None = None) -> SolvedDay:
    """Unpack a raw LP solution into named blocks.

    Args:
        model: the assembled model.
        result: solver output for ``model``.
        inst: when given, the closed-form worst-case slopes are recorded.
        polish: also compute per-row minimal dual blocks (see ``polish_solution``).
        settings: solver settings for the polishing LPs.
    """
    if result.status != OPTIMAL:
        return SolvedDay(result.status, None, result=result)
    vi = model.var_index
    x = np.asarray(result.primal, dtype=float)
    if len(x) != model.n_vars:
        raise ValueError("solution length does not match the model")
    take = lambda idx: np.where(idx >= 0, x[np.maximum(idx, 0)], 0.0)
    xb = np.maximum(take(vi["x_b"]), 0.0)
    xr = np.maximum(take(vi["x_r"]), 0.0)
    dec = MarketDecision(xb, xr)
    duals = {b: take(vi[b]) for b in DUAL_BLOCKS + TERMINAL_DUALS}
    m_closed = None
    if inst is not None:
        b = inst.battery
        m_closed = np.maximum(b.eta_plus * xr, xr / b.eta_minus - b.delta_eta * xb)
    day = SolvedDay(
        OPTIMAL, dec, m=take(vi["m"]), m_closed=m_closed, z=float(x[vi["z"][0]]),
        objective=result.objective, duals=duals, result=result,
    )
    if polish:
        xp, checks = polish_solution(model, x, settings)
        tp = lambda idx: np.where(idx >= 0, xp[np.maximum(idx, 0)], 0.0)
        day.polished = {b: tp(vi[b]) for b in DUAL_BLOCKS + TERMINAL_DUALS + ("m", "z")}
        day.polished_objective = model.objective(xp)
        day.blocks = checks
        day.polished["x"] = xp
    return day


def solve_day(inst: ProblemInstance, regulation: bool = True, settings: SolveSettings | None = None, backend: str = "bundled", polish: bool = False) -> SolvedDay:
    """Assemble, solve and unpack in one call."""
    model = assemble_lp(inst, regulation=regulation)
    res = solve(model, settings, backend=backend)
    return extract_decision(model, res, inst, polish=polish, settings=settings)


@dataclass(frozen=True)
class FeasibilityReport:
    max_violation: float
    power_violation: float
    soc_max_violation: float
    soc_min_violation: float
    envelope_lo: np.ndarray
    envelope_hi: np.ndarray

    def feasible(self, tol: float = 1e-6) -> bool:
        return self.max_violation <= tol


def verify_robust_feasibility(decision: MarketDecision, inst: ProblemInstance) -> FeasibilityReport:
    """Check power limits and worst-case SoC bounds using the oracles only."""
    if decision.K != inst.K:
        raise ValueError("decision length does not match the instance")
    prof, bat = inst.profile, inst.battery
    pv = max(
        float(np.max(decision.x_r + decision.x_b - prof.ybar_plus, initial=0.0)),
        float(np.max(decision.x_r - decision.x_b - prof.ybar_minus, initial=0.0)),
        0.0,
    )
    spec = inst.u_hard
    hi = np.array([worst_case_max_soc(decision, inst.y0_hard.hi, inst, spec, k) for k in range(inst.K + 1)])
    lo = np.array([worst_case_min_soc(decision, inst.y0_hard.lo, inst, spec, k) for k in range(inst.K + 1)])
    sv_hi = max(float(np.max(hi - bat.y_max)), 0.0)
    sv_lo = max(float(np.max(bat.y_min - lo)), 0.0)
    return FeasibilityReport(max(pv, sv_hi, sv_lo), pv, sv_hi, sv_lo, lo, hi)
