"""Bounded-variable revised simplex with an optimality certificate.

The bundled backend keeps the basis as an LU factorization plus a product-form
eta file that is rebuilt every ``refactor_every`` pivots.  By default it runs a
dual simplex with dual steepest-edge pricing from the all-slack basis and then
a primal pass on the true costs and bounds, which normally takes no pivots but
guarantees that the returned vertex is primal and dual feasible for the
original model.  The primal method alone is the fallback: its phase 1
minimizes the sum of bound infeasibilities of the basic variables, so no
artificial columns are needed.  The ``external``
backend round-trips the model through an MPS file and hands it to HiGHS via
``scipy.optimize.linprog``.
"""

from __future__ import annotations

import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.linalg import splu

from .lp import EQ, GE, LE, LPModel, read_mps, write_mps

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

BACKENDS = ("bundled", "external")

# basis status codes for columns
_BASIC, _AT_LO, _AT_HI, _FREE, _FIXED = 0, 1, 2, 3, 4

_DENSE_MAX_ROWS = 300
_PIVOT_TOL = 1e-9
_DUAL_BOX = 1e5


@dataclass(frozen=True)
class SolveSettings:
    """Tolerances and limits for ``solve``.

    Args:
        feas_tol: absolute primal feasibility tolerance.
        opt_tol: reduced-cost tolerance relative to the largest cost.
        max_iters: simplex iteration cap over both phases.
        refactor_every: pivots between fresh basis factorizations.
        stall_limit: degenerate primal pivots tolerated before switching to
            Bland's rule.
        perturbation: relative size of the random cost (dual method) or bound
            (primal method) shift used to break degeneracy; 0 disables it.
            The true data are restored and the solve finished on them.
        pivot_rule: primal pricing; only "steepest-ratio" is implemented,
            which prices by reduced cost over column norm and falls back to
            Bland on stalls.
        method: "dual" (dual simplex plus primal clean-up) or "primal".
    """

    feas_tol: float = 1e-9
    opt_tol: float = 1e-9
    max_iters: int = 200_000
    refactor_every: int = 64
    stall_limit: int = 200
    pivot_rule: str = "steepest-ratio"
    perturbation: float = 1e-7
    method: str = "dual"

    def __post_init__(self):
        if not (self.feas_tol > 0 and self.opt_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.perturbation < 0:
            raise ValueError("perturbation must be nonnegative")
        if self.max_iters < 1 or self.refactor_every < 1 or self.stall_limit < 1:
            raise ValueError("iteration limits must be positive")
        if self.pivot_rule != "steepest-ratio":
            raise ValueError(f"unknown pivot rule {self.pivot_rule!r}")
        if self.method not in ("dual", "primal"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class SolveResult:
    status: str
    primal: np.ndarray | None
    dual: np.ndarray | None
    objective: float
    iterations: int = 0
    message: str = ""
    backend: str = "bundled"
    max_basis_residual: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class Certificate:
    ok: bool
    primal_residual: float
    gap: float
    dual_sign_violation: float
    complementarity: float
    dual_objective: float
    failures: list = field(default_factory=list)


class _Factor:
    """LU of the basis at the last refactorization plus an eta file."""

    def __init__(self, B):
        self.dense = isinstance(B, np.ndarray)
        if self.dense:
            lu, piv = sla.lu_factor(B, check_finite=False)
            if np.min(np.abs(np.diag(lu))) < 1e-13:
                raise np.linalg.LinAlgError("singular basis")
            self._lu = (lu, piv)
        else:
            self._lu = splu(B, permc_spec="COLAMD")
        self.etas: list = []

    def _solve(self, v, trans):
        if self.dense:
            return sla.lu_solve(self._lu, v, trans=1 if trans else 0, check_finite=False)
        return self._lu.solve(v, trans="T" if trans else "N")

    def ftran(self, v: np.ndarray) -> np.ndarray:
        w = self._solve(v, False)
        for r, idx, val, piv in self.etas:
            wr = w[r] / piv
            if wr != 0.0:
                w[idx] -= val * wr
            w[r] = wr
        return w

    def btran(self, cvec: np.ndarray) -> np.ndarray:
        c = np.array(cvec, dtype=float)
        for r, idx, val, piv in reversed(self.etas):
            c[r] = (c[r] - val @ c[idx]) / piv
        return self._solve(c, True)

    def push(self, r: int, alpha: np.ndarray):
        # eta columns are stored sparsely without their pivot entry
        idx = np.flatnonzero(alpha)
        idx = idx[idx != r]
        self.etas.append((r, idx, alpha[idx].copy(), alpha[r]))


@dataclass
class _Presolved:
    keep_cols: np.ndarray
    keep_rows: np.ndarray
    x_fixed: np.ndarray
    c0: float
    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    row_sign: np.ndarray
    slack_hi: np.ndarray
    infeasible_row: int | None = None


def _presolve(model: LPModel, tol: float) -> _Presolved:
    fixed = model.lo == model.hi
    keep_cols = np.flatnonzero(~fixed)
    x_fixed = np.where(fixed, model.lo, 0.0)
    A = model.A.tocsr()
    shift = A @ x_fixed
    rhs = model.rhs - shift
    c0 = model.c0 + float(model.c @ x_fixed)
    A_k = A[:, keep_cols]
    nnz_row = np.diff(A_k.tocsr().indptr)
    empty = nnz_row == 0
    bad = None
    for i in np.flatnonzero(empty):
        s, r = model.sense[i], rhs[i]
        scale = 1.0 + abs(model.rhs[i])
        if (s == LE and r < -tol * scale) or (s == GE and r > tol * scale) or (s == EQ and abs(r) > tol * scale):
            bad = int(i)
            break
    keep_rows = np.flatnonzero(~empty)
    sense = model.sense[keep_rows]
    sign = np.where(sense == GE, -1.0, 1.0)
    A_r = sp.diags(sign) @ A_k[keep_rows, :]
    return _Presolved(
        keep_cols=keep_cols,
        keep_rows=keep_rows,
        x_fixed=x_fixed,
        c0=c0,
        A=sp.csc_matrix(A_r),
        b=sign * rhs[keep_rows],
        c=model.c[keep_cols].astype(float),
        lo=model.lo[keep_cols].astype(float),
        hi=model.hi[keep_cols].astype(float),
        row_sign=sign,
        slack_hi=np.where(sense == EQ, 0.0, np.inf),
        infeasible_row=bad,
    )


class _Simplex:
    def __init__(self, pre: "_Presolved", settings: SolveSettings):
        m, n = pre.A.shape
        self.m, self.n, self.N = m, n, n + m
        self.settings = settings
        self.Af = sp.hstack([pre.A, sp.identity(m, format="csc")], format="csc")
        self.AfT = self.Af.T.tocsr()
        self.b = pre.b
        self.c = np.concatenate([pre.c, np.zeros(m)])
        self.lo = np.concatenate([pre.lo, np.zeros(m)])
        self.hi = np.concatenate([pre.hi, pre.slack_hi])
        norms = np.sqrt(np.asarray(self.Af.multiply(self.Af).sum(axis=0)).ravel())
        norms[norms == 0] = 1.0
        self.norms = norms
        self.y = np.zeros(m)
        # small models are cheaper to handle as dense arrays than through sparse wrappers
        self.dense = m <= _DENSE_MAX_ROWS and m * self.N <= 200_000
        if self.dense:
            self.Ad = self.Af.toarray()
            self.AdT = np.ascontiguousarray(self.Ad.T)

    def column(self, j: int) -> np.ndarray:
        if self.dense:
            return self.Ad[:, j].copy()
        A = self.Af
        v = np.zeros(self.m)
        p0, p1 = A.indptr[j], A.indptr[j + 1]
        v[A.indices[p0:p1]] = A.data[p0:p1]
        return v

    def times(self, x: np.ndarray) -> np.ndarray:
        return self.Ad @ x if self.dense else self.Af @ x

    def times_t(self, y: np.ndarray) -> np.ndarray:
        return self.AdT @ y if self.dense else self.AfT @ y

    def perturb(self, scale: float, seed: int = 0):
        """Relax every finite bound by a tiny random amount to break degeneracy."""
        rng = np.random.default_rng(seed)
        self._lo_true, self._hi_true = self.lo.copy(), self.hi.copy()
        free_range = self.lo < self.hi
        eps_lo = scale * (1.0 + rng.random(self.N)) * (1.0 + np.abs(np.where(np.isfinite(self.lo), self.lo, 0.0)))
        eps_hi = scale * (1.0 + rng.random(self.N)) * (1.0 + np.abs(np.where(np.isfinite(self.hi), self.hi, 0.0)))
        self.lo = np.where(free_range, self.lo - eps_lo, self.lo)
        self.hi = np.where(free_range, self.hi + eps_hi, self.hi)

    def unperturb(self):
        """Restore the true bounds, keeping the basis; nonbasic variables snap to them."""
        self.lo, self.hi = self._lo_true, self._hi_true
        s = self.status
        at_lo, at_hi = s == _AT_LO, s == _AT_HI
        self.x[at_lo] = self.lo[at_lo]
        self.x[at_hi] = self.hi[at_hi]
        self.refactor()

    def setup(self):
        lo, hi = self.lo, self.hi
        status = np.empty(self.N, dtype=np.int8)
        x = np.zeros(self.N)
        fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
        status[fin_lo] = _AT_LO
        x[fin_lo] = lo[fin_lo]
        only_hi = ~fin_lo & fin_hi
        status[only_hi] = _AT_HI
        x[only_hi] = hi[only_hi]
        status[~fin_lo & ~fin_hi] = _FREE
        status[lo == hi] = _FIXED
        self.basis = np.arange(self.n, self.N)
        status[self.basis] = _BASIC
        self.status = status
        self.x = x
        self.refactor()

    def refactor(self):
        B = self.Ad[:, self.basis] if self.dense else sp.csc_matrix(self.Af[:, self.basis])
        self.factor = _Factor(B)
        xn = np.where(self.status == _BASIC, 0.0, self.x)
        self.xB = self.factor.ftran(self.b - self.times(xn))
        self.x[self.basis] = self.xB

    def basis_residual(self) -> float:
        xn = np.where(self.status == _BASIC, 0.0, self.x)
        B = self.Af[:, self.basis]
        return float(np.max(np.abs(B @ self.xB - (self.b - self.times(xn))), initial=0.0))

    def run(self) -> tuple[str, int]:
        st = self.settings
        tol = st.feas_tol
        dtol = st.opt_tol * max(1.0, float(np.max(np.abs(self.c), initial=0.0)))
        it = 0
        since_refactor = 0
        best = np.inf
        stall = 0
        bland = False
        phase = 1
        while True:
            if since_refactor >= st.refactor_every:
                self.refactor()
                since_refactor = 0
            loB, hiB = self.lo[self.basis], self.hi[self.basis]
            below = self.xB < loB - tol
            above = self.xB > hiB + tol
            if phase == 1 and not (below.any() or above.any()):
                phase = 2
                best, stall, bland = np.inf, 0, False
            if phase == 1:
                cB = above.astype(float) - below.astype(float)
                cost = np.zeros(self.N)
                obj = float(np.sum((loB - self.xB)[below]) + np.sum((self.xB - hiB)[above]))
            else:
                cB = self.c[self.basis]
                cost = self.c
                obj = float(self.c @ self.x)
            y = self.factor.btran(cB)
            d = cost - self.times_t(y)
            s = self.status
            elig = ((s == _AT_LO) & (d < -dtol)) | ((s == _AT_HI) & (d > dtol)) | ((s == _FREE) & (np.abs(d) > dtol))
            if not elig.any():
                if since_refactor > 0:
                    # confirm on a fresh factorization before declaring a result
                    self.refactor()
                    since_refactor = 0
                    continue
                self.y = y
                return (INFEASIBLE if phase == 1 else OPTIMAL), it
            if it >= st.max_iters:
                self.y = y
                return ITERATION_LIMIT, it
            if obj < best - 1e-12 * max(1.0, abs(best) if np.isfinite(best) else 1.0):
                best, stall, bland = obj, 0, False
            else:
                stall += 1
                if stall >= st.stall_limit:
                    bland = True
            cand = np.flatnonzero(elig)
            if bland:
                q = int(cand[0])
            else:
                q = int(cand[np.argmax(np.abs(d[cand]) / self.norms[cand])])
            direction = 1.0 if d[q] < 0 else -1.0
            alpha = self.factor.ftran(self.column(q))
            g = direction * alpha
            r, theta, target = self._ratio(g, phase, bland, tol)
            rng = self.hi[q] - self.lo[q]
            if r < 0 and not np.isfinite(rng):
                if phase == 1:
                    # cannot happen in exact arithmetic; retry on fresh factors
                    if since_refactor == 0:
                        self.y = y
                        return INFEASIBLE, it
                    self.refactor()
                    since_refactor = 0
                    continue
                self.y = y
                self.ray = (q, direction)
                return UNBOUNDED, it
            it += 1
            if r < 0 or rng <= theta:
                # bound flip of the entering variable
                step = rng
                self.xB -= step * g
                self.x[self.basis] = self.xB
                if s[q] == _AT_LO:
                    s[q] = _AT_HI
                    self.x[q] = self.hi[q]
                else:
                    s[q] = _AT_LO
                    self.x[q] = self.lo[q]
                continue
            leaving = self.basis[r]
            self.xB -= theta * g
            xq = self.x[q] + direction * theta
            self.x[leaving] = target
            s[leaving] = _AT_LO if target == self.lo[leaving] else _AT_HI
            if self.lo[leaving] == self.hi[leaving]:
                s[leaving] = _FIXED
            self.basis[r] = q
            s[q] = _BASIC
            self.xB[r] = xq
            self.x[self.basis] = self.xB
            self.factor.push(r, alpha)
            since_refactor += 1

    def reduced_costs(self) -> np.ndarray:
        self.y = self.factor.btran(self.c[self.basis])
        d = self.c - self.times_t(self.y)
        d[self.basis] = 0.0
        return d

    def make_dual_feasible(self, box: float, cost_noise: float, seed: int = 0) -> np.ndarray:
        """Move nonbasic columns to the bound their reduced cost prefers.

        Columns that would need an infinite bound get a temporary box of
        width ``box``; their indices are returned so the caller can check
        whether any of them ended up active.  With ``cost_noise`` > 0 the
        costs are shifted away from zero in the favourable direction, which
        breaks the ties that make dual pivots degenerate.
        """
        self._c_true = self.c.copy()
        self._lo_orig, self._hi_orig = self.lo.copy(), self.hi.copy()
        dtol = self.settings.opt_tol * max(1.0, float(np.max(np.abs(self.c), initial=0.0)))
        d = self.reduced_costs()
        s = self.status
        nb = (s == _AT_LO) | (s == _AT_HI) | (s == _FREE)
        fin_lo, fin_hi = np.isfinite(self.lo), np.isfinite(self.hi)
        want_lo = nb & (d > dtol)
        want_hi = nb & (d < -dtol)
        art = (want_lo & ~fin_lo) | (want_hi & ~fin_hi)
        base = np.where(fin_lo, self.lo, np.where(fin_hi, self.hi, 0.0))
        self.lo = np.where(want_lo & ~fin_lo, base - box, self.lo)
        self.hi = np.where(want_hi & ~fin_hi, np.where(fin_lo, self.lo, 0.0) + box, self.hi)
        s[want_lo] = _AT_LO
        s[want_hi] = _AT_HI
        self.x[want_lo] = self.lo[want_lo]
        self.x[want_hi] = self.hi[want_hi]
        if cost_noise > 0:
            rng = np.random.default_rng(seed)
            eps = cost_noise * (1.0 + rng.random(self.N)) * (1.0 + np.abs(self.c))
            self.c = self.c + np.where(s == _AT_LO, eps, np.where(s == _AT_HI, -eps, 0.0))
        self.refactor()
        return np.flatnonzero(art)

    def restore_after_dual(self, art: np.ndarray) -> bool:
        """Drop temporary boxes and cost shifts; False if a temporary bound is active."""
        self.c = self._c_true
        if np.any(self.status[art] != _BASIC):
            return False
        self.lo, self.hi = self._lo_orig, self._hi_orig
        return True

    def run_dual(self) -> tuple[str, int]:
        """Dual simplex with dual steepest-edge pricing from a dual feasible basis."""
        st = self.settings
        tol = st.feas_tol
        dtol = st.opt_tol * max(1.0, float(np.max(np.abs(self.c), initial=0.0)))
        d = self.reduced_costs()
        beta = np.ones(self.m)
        it = 0
        since_refactor = 0
        e = np.zeros(self.m)
        while True:
            if since_refactor >= st.refactor_every:
                self.refactor()
                d = self.reduced_costs()
                since_refactor = 0
            loB, hiB = self.lo[self.basis], self.hi[self.basis]
            infeas = np.maximum(loB - self.xB, self.xB - hiB)
            cand = np.flatnonzero(infeas > tol)
            if cand.size == 0:
                if since_refactor > 0:
                    self.refactor()
                    d = self.reduced_costs()
                    since_refactor = 0
                    continue
                return OPTIMAL, it
            if it >= st.max_iters:
                return ITERATION_LIMIT, it
            r = int(cand[np.argmax(infeas[cand] ** 2 / beta[cand])])
            above = self.xB[r] > hiB[r]
            sgn = 1.0 if above else -1.0
            e[r] = 1.0
            rho = self.factor.btran(e)
            e[r] = 0.0
            row = self.times_t(rho)
            at = sgn * row
            s = self.status
            elig = ((s == _AT_LO) & (at > _PIVOT_TOL)) | ((s == _AT_HI) & (at < -_PIVOT_TOL)) | ((s == _FREE) & (np.abs(at) > _PIVOT_TOL))
            jj = np.flatnonzero(elig)
            if jj.size == 0:
                if since_refactor > 0:
                    self.refactor()
                    d = self.reduced_costs()
                    since_refactor = 0
                    continue
                return INFEASIBLE, it
            aj = np.abs(at[jj])
            dj = np.where(s[jj] == _FREE, np.abs(d[jj]), np.maximum(d[jj] / at[jj], 0.0) * aj)
            ratio = dj / aj
            tmax = ((dj + dtol) / aj).min()
            ok = np.flatnonzero(ratio <= tmax)
            q = int(jj[ok[np.argmax(aj[ok])]])
            alpha = self.factor.ftran(self.column(q))
            arq = alpha[r]
            if abs(arq - row[q]) > 1e-7 * (1.0 + abs(arq)) and since_refactor > 0:
                # the updated factors have drifted; start over from a fresh factorization
                self.refactor()
                d = self.reduced_costs()
                since_refactor = 0
                continue
            it += 1
            # dual steepest-edge weights
            tau = self.factor.ftran(rho.copy())
            beta_r = float(rho @ rho)
            ratio_col = alpha / arq
            beta = np.maximum(beta - 2.0 * ratio_col * tau + ratio_col**2 * beta_r, 1e-6)
            beta[r] = max(beta_r / arq**2, 1e-6)
            # primal step
            leaving = self.basis[r]
            bound = hiB[r] if above else loB[r]
            theta_p = (self.xB[r] - bound) / arq
            self.xB -= theta_p * alpha
            self.xB[r] = self.x[q] + theta_p
            self.x[leaving] = bound
            s[leaving] = _AT_HI if above else _AT_LO
            if self.lo[leaving] == self.hi[leaving]:
                s[leaving] = _FIXED
            # dual step
            theta_d = d[q] / row[q]
            d -= theta_d * row
            d[leaving] = -theta_d
            self.basis[r] = q
            s[q] = _BASIC
            d[self.basis] = 0.0
            self.x[self.basis] = self.xB
            self.factor.push(r, alpha)
            since_refactor += 1

    def _ratio(self, g, phase, bland, tol):
        """Harris two-pass ratio test; returns (row, step, bound the leaving variable lands on)."""
        nz = np.flatnonzero(np.abs(g) > _PIVOT_TOL)
        if nz.size == 0:
            return -1, np.inf, np.nan
        gz = g[nz]
        xB = self.xB[nz]
        bas = self.basis[nz]
        loB, hiB = self.lo[bas], self.hi[bas]
        dec = gz > 0
        inc = ~dec
        if phase == 1:
            below = xB < loB - tol
            above = xB > hiB + tol
            # an infeasible variable moving towards its bounds stops at the far bound, or at the
            # near bound when the far one is infinite
            lim_dec = np.where(below, -np.inf, np.where(above & ~np.isfinite(loB), hiB, loB))
            lim_inc = np.where(above, np.inf, np.where(below & ~np.isfinite(hiB), loB, hiB))
        else:
            lim_dec, lim_inc = loB, hiB
        idx_dec = np.flatnonzero(dec & np.isfinite(lim_dec))
        idx_inc = np.flatnonzero(inc & np.isfinite(lim_inc))
        if idx_dec.size == 0 and idx_inc.size == 0:
            return -1, np.inf, np.nan
        loc = np.concatenate([idx_dec, idx_inc])
        lim = np.concatenate([lim_dec[idx_dec], lim_inc[idx_inc]])
        # distance to the limit along the direction of motion
        gap = np.where(gz[loc] > 0, xB[loc] - lim, lim - xB[loc])
        ag = np.abs(gz[loc])
        exact = np.maximum(gap / ag, 0.0)
        rows = nz[loc]
        if bland:
            tmin = exact.min()
            ties = np.flatnonzero(exact <= tmin + 1e-12)
            pick = ties[np.argmin(bas[loc[ties]])]
            return int(rows[pick]), float(exact[pick]), float(lim[pick])
        # variables already past a bound by more than tol give a negative relaxed step
        tmax = max(((gap + tol) / ag).min(), 0.0)
        ok = np.flatnonzero(exact <= tmax)
        if ok.size == 0:
            ok = np.flatnonzero(exact <= exact.min())
        pick = ok[np.argmax(ag[ok])]
        return int(rows[pick]), float(exact[pick]), float(lim[pick])


def _run_primal(pre: _Presolved, settings: SolveSettings):
    sx = _Simplex(pre, settings)
    if settings.perturbation > 0:
        sx.perturb(settings.perturbation)
    sx.setup()
    status, iters = sx.run()
    if settings.perturbation > 0 and status in (OPTIMAL, INFEASIBLE):
        # finish on the true bounds from the perturbed optimal basis
        sx.unperturb()
        status, more = sx.run()
        iters += more
    return sx, status, iters


def _run_simplex(pre: _Presolved, settings: SolveSettings):
    """Dual simplex followed by a primal clean-up pass; primal alone as fallback."""
    if settings.method == "primal":
        return _run_primal(pre, settings)
    sx = _Simplex(pre, settings)
    sx.setup()
    scale = max(1.0, float(np.max(np.abs(pre.b), initial=0.0)))
    art = sx.make_dual_feasible(_DUAL_BOX * scale, settings.perturbation)
    status, iters = sx.run_dual()
    if status == OPTIMAL and sx.restore_after_dual(art):
        sx.refactor()
        status, more = sx.run()
        iters += more
        if status == OPTIMAL:
            return sx, status, iters
    log.debug("dual simplex ended with %s, falling back to the primal method", status)
    sx, status, more = _run_primal(pre, settings)
    return sx, status, iters + more


def _solve_bundled(model: LPModel, settings: SolveSettings) -> SolveResult:
    pre = _presolve(model, settings.feas_tol)
    if pre.infeasible_row is not None:
        return SolveResult(INFEASIBLE, None, None, np.nan, 0, f"empty row {pre.infeasible_row} is inconsistent")
    m, n = pre.A.shape
    if n == 0 or m == 0:
        return _solve_trivial(model, pre)
    try:
        sx, status, iters = _run_simplex(pre, settings)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        return SolveResult(ITERATION_LIMIT, None, None, np.nan, 0, f"numerical failure: {exc}")
    x_full = pre.x_fixed.copy()
    xs = sx.x[:n].copy()
    x_full[pre.keep_cols] = np.clip(xs, pre.lo, pre.hi)
    dual = np.zeros(model.n_cons)
    dual[pre.keep_rows] = pre.row_sign * sx.y
    resid = sx.basis_residual()
    if status == OPTIMAL:
        obj = model.objective(x_full)
        return SolveResult(OPTIMAL, x_full, dual, obj, iters, "", "bundled", resid)
    if status == UNBOUNDED:
        return SolveResult(UNBOUNDED, x_full, None, -np.inf, iters, "objective unbounded below")
    if status == INFEASIBLE:
        return SolveResult(INFEASIBLE, None, None, np.nan, iters, "phase 1 ended with positive infeasibility")
    return SolveResult(ITERATION_LIMIT, x_full, None, np.nan, iters, f"stopped after {iters} iterations")


def _solve_trivial(model: LPModel, pre: _Presolved) -> SolveResult:
    """No rows or no free columns left after presolve: solve by bounds."""
    x_full = pre.x_fixed.copy()
    c, lo, hi = pre.c, pre.lo, pre.hi
    xs = np.where(c > 0, lo, np.where(c < 0, hi, np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))))
    if pre.A.shape[0] > 0:
        # all columns fixed but rows remain: rows are constant
        return SolveResult(OPTIMAL, x_full, np.zeros(model.n_cons), model.objective(x_full), 0)
    if np.any(~np.isfinite(xs)):
        return SolveResult(UNBOUNDED, None, None, -np.inf, 0, "objective unbounded below")
    x_full[pre.keep_cols] = xs
    return SolveResult(OPTIMAL, x_full, np.zeros(model.n_cons), model.objective(x_full), 0)


def _solve_external(model: LPModel, settings: SolveSettings) -> SolveResult:
    with tempfile.TemporaryDirectory() as tmp:
        path = write_mps(model, Path(tmp) / "model.mps")
        back = read_mps(path)
    A = back.A.tocsr()
    le, ge, eq = back.sense == LE, back.sense == GE, back.sense == EQ
    A_ub = sp.vstack([A[le], -A[ge]]).tocsr()
    b_ub = np.concatenate([back.rhs[le], -back.rhs[ge]])
    res = linprog(
        back.c,
        A_ub=A_ub if A_ub.shape[0] else None,
        b_ub=b_ub if A_ub.shape[0] else None,
        A_eq=A[eq] if eq.any() else None,
        b_eq=back.rhs[eq] if eq.any() else None,
        bounds=np.column_stack([np.where(np.isfinite(back.lo), back.lo, -np.inf), back.hi]),
        method="highs-ds",
        options={"presolve": False, "primal_feasibility_tolerance": max(settings.feas_tol, 1e-10), "dual_feasibility_tolerance": max(settings.opt_tol, 1e-10), "maxiter": settings.max_iters},
    )
    status = {0: OPTIMAL, 1: ITERATION_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status, ITERATION_LIMIT)
    if status != OPTIMAL:
        return SolveResult(status, None, None, np.nan, int(getattr(res, "nit", 0)), res.message, "external")
    dual = np.zeros(model.n_cons)
    n_le = int(le.sum())
    ub_m = res.ineqlin.marginals if A_ub.shape[0] else np.zeros(0)
    dual[np.flatnonzero(le)] = ub_m[:n_le]
    dual[np.flatnonzero(ge)] = -ub_m[n_le:]
    if eq.any():
        dual[np.flatnonzero(eq)] = res.eqlin.marginals
    x = np.clip(res.x, model.lo, model.hi)
    return SolveResult(OPTIMAL, x, dual, model.objective(x), int(res.nit), res.message, "external")


def solve(model: LPModel, settings: SolveSettings | None = None, backend: str = "bundled") -> SolveResult:
    """Solve ``model`` to optimality.

    Args:
        model: the LP.
        settings: tolerances and limits, defaults to ``SolveSettings()``.
        backend: "bundled" for the in-package simplex or "external" for
            HiGHS reached through an MPS file.

    Returns:
        A ``SolveResult``.  Row duals are sensitivities of the optimal value
        with respect to the original right-hand sides, so rows written as
        ``<=`` carry nonpositive and rows written as ``>=`` nonnegative duals.
    """
    settings = settings or SolveSettings()
    if backend == "bundled":
        return _solve_bundled(model, settings)
    if backend == "external":
        return _solve_external(model, settings)
    raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")


def certify(model: LPModel, result: SolveResult, settings: SolveSettings | None = None, gap_tol: float = 1e-7) -> Certificate:
    """Independently check primal feasibility, dual signs and the duality gap.

    Raises:
        ValueError: if ``result`` is not an optimal solution.
    """
    settings = settings or SolveSettings()
    if result.status != OPTIMAL or result.primal is None or result.dual is None:
        raise ValueError(f"refusing to certify a result with status {result.status!r}")
    x, y = np.asarray(result.primal, float), np.asarray(result.dual, float)
    failures = []
    act = model.A @ x
    slack = model.rhs - act
    scale = 1.0 + np.abs(model.rhs)
    row_viol = np.zeros(model.n_cons)
    le, ge, eq = model.sense == LE, model.sense == GE, model.sense == EQ
    row_viol[le] = np.maximum(-slack[le], 0)
    row_viol[ge] = np.maximum(slack[ge], 0)
    row_viol[eq] = np.abs(slack[eq])
    bound_viol = np.maximum(np.maximum(model.lo - x, x - model.hi), 0)
    primal_res = float(max(np.max(row_viol / scale, initial=0.0), np.max(bound_viol, initial=0.0)))
    ptol = 10 * settings.feas_tol
    if primal_res > ptol:
        worst = int(np.argmax(row_viol / scale)) if row_viol.size else -1
        failures.append(f"primal residual {primal_res:.3e} exceeds {ptol:.1e} (worst row {worst})")
    cmax = max(1.0, float(np.max(np.abs(model.c), initial=0.0)))
    sign_viol = float(max(np.max(y[le], initial=0.0), np.max(-y[ge], initial=0.0)))
    if sign_viol > 1e-7 * cmax:
        failures.append(f"dual sign violation {sign_viol:.3e}")
    d = model.c - model.A.T @ y
    dtol = 1e-7 * cmax
    dz = np.where(np.abs(d) <= dtol, 0.0, d)
    if np.any((dz > 0) & ~np.isfinite(model.lo)) or np.any((dz < 0) & ~np.isfinite(model.hi)):
        failures.append("reduced cost points along an infinite bound")
        dual_obj = -np.inf
    else:
        bound_term = np.where(dz > 0, dz * np.where(np.isfinite(model.lo), model.lo, 0.0), 0.0)
        bound_term += np.where(dz < 0, dz * np.where(np.isfinite(model.hi), model.hi, 0.0), 0.0)
        dual_obj = float(model.c0 + model.rhs @ y + bound_term.sum())
    primal_obj = model.objective(x)
    gap = abs(primal_obj - dual_obj) / max(1.0, abs(primal_obj))
    if not gap <= gap_tol:
        failures.append(f"relative duality gap {gap:.3e} exceeds {gap_tol:.1e}")
    comp = float(np.max(np.abs(y * slack) * (~eq), initial=0.0))
    if comp > gap_tol * max(1.0, abs(primal_obj)):
        failures.append(f"complementary slackness residual {comp:.3e}")
    return Certificate(not failures, primal_res, gap, sign_viol, comp, dual_obj, failures)
