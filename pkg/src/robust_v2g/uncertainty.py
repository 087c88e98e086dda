"""Rolling-window budget uncertainty sets and their worst-case oracles.

A set is described by an activation period ``gamma`` and a regulation cycle
``Gamma`` on a grid of ``K`` intervals of length ``dt``.  On that grid a
scenario ``delta`` is admissible when ``|delta_k| <= 1`` and every window of
``w = Gamma/dt`` consecutive intervals (truncated at the start of the day)
carries at most ``b = gamma/dt`` units of ``|delta|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .lp import LE, LPBuilder, LPModel
from .model import MarketDecision, ProblemInstance, SoCInterval, as_multiple
from .solver import SolveSettings, solve

DEFAULT_ENUM_CAP = 20


@dataclass(frozen=True)
class UncertaintyWindowSpec:
    gamma: float
    Gamma: float
    dt: float
    K: int
    w: int = field(init=False)
    b: int = field(init=False)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not 0 < self.gamma <= self.Gamma:
            raise ValueError(f"need 0 < gamma <= Gamma, got gamma={self.gamma}, Gamma={self.Gamma}")
        w = as_multiple(self.Gamma, self.dt, "Gamma")
        b = as_multiple(self.gamma, self.dt, "gamma")
        if w > self.K:
            raise ValueError(f"Gamma={self.Gamma} exceeds the horizon K*dt={self.K * self.dt}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)

    @property
    def T(self) -> float:
        return self.K * self.dt

    @property
    def activation_ratio(self) -> float:
        return self.gamma / self.Gamma

    def restrict(self, K: int) -> "UncertaintyWindowSpec":
        """Same set family over the first ``K`` intervals.

        Windows longer than the new horizon are clamped to it, which leaves
        the set unchanged because a window covering the whole horizon is the
        widest one available.
        """
        if not 1 <= K:
            raise ValueError("K must be at least 1")
        Gamma = min(self.Gamma, K * self.dt)
        gamma = min(self.gamma, Gamma)
        return UncertaintyWindowSpec(gamma, Gamma, self.dt, K)


@dataclass(frozen=True)
class Scenario:
    delta: np.ndarray

    def __post_init__(self):
        d = np.array(self.delta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(d)) or np.any(np.abs(d) > 1 + 1e-9):
            raise ValueError("scenario entries must lie in [-1, 1]")
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)

    @property
    def K(self) -> int:
        return self.delta.shape[0]


@dataclass(frozen=True)
class SubgridSpec:
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")


def _as_delta(s) -> np.ndarray:
    return s.delta if isinstance(s, Scenario) else np.asarray(s, dtype=float)


def window_sums(spec: UncertaintyWindowSpec, values) -> np.ndarray:
    """Rolling sums of ``values`` over each window ending at k = 1..K.

    ``values`` may be a stack of scenarios with the interval axis last.
    """
    v = np.asarray(values, dtype=float)
    cs = np.cumsum(v, axis=-1)
    out = cs.copy()
    out[..., spec.w:] -= cs[..., :-spec.w]
    return out


def contains(spec: UncertaintyWindowSpec, s, tol: float = 1e-12) -> bool:
    """Membership of a scenario in D_K (absolute values enter the budget)."""
    d = _as_delta(s)
    if d.shape != (spec.K,):
        raise ValueError(f"scenario has shape {d.shape}, expected ({spec.K},)")
    a = np.abs(d)
    if np.any(a > 1 + tol):
        return False
    return bool(np.all(window_sums(spec, a) <= spec.b + tol))


def enumerate_binary_scenarios(spec: UncertaintyWindowSpec, cap: int = DEFAULT_ENUM_CAP) -> np.ndarray:
    """All binary points of D+_K as the rows of an integer array."""
    if spec.K > cap:
        raise ValueError(f"refusing to enumerate 2^{spec.K} scenarios (cap K <= {cap})")
    codes = np.arange(2**spec.K, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(spec.K)) & 1).astype(np.int8)
    keep = np.all(window_sums(spec, bits) <= spec.b, axis=1)
    return bits[keep]


@lru_cache(maxsize=256)
def _oracle_lp(K: int, w: int, b: int) -> LPModel:
    bld = LPBuilder(f"worst_case_K{K}_w{w}_b{b}")
    idx = bld.add_block("delta", K, lo=0.0, hi=1.0)
    for k in range(K):
        start = max(0, k - w + 1)
        bld.add_row(f"window[{k}]", idx[start:k + 1], 1.0, LE, b, family="window")
    return bld.build()


def oracle_lp(spec: UncertaintyWindowSpec, weights) -> LPModel:
    """LP ``min -weights @ delta`` over D+_K."""
    return _oracle_lp(spec.K, spec.w, spec.b).with_objective(-np.asarray(weights, dtype=float))


def worst_case_weighted_sum(spec: UncertaintyWindowSpec, weights, k: int | None = None, settings: SolveSettings | None = None) -> tuple[float, Scenario]:
    """Maximize ``sum_{l<=k} weights_l * delta_l`` over D+_K.

    Args:
        spec: the uncertainty set.
        weights: nonnegative weights of length K.
        k: prefix length; weights after position k are ignored.  Defaults to K.
        settings: optional solver settings.

    Returns:
        The optimal value and the optimal LP vertex, which is binary.
    """
    w = np.array(weights, dtype=float).reshape(-1)
    if w.shape[0] != spec.K:
        raise ValueError(f"need {spec.K} weights, got {w.shape[0]}")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative; apply the sign symmetry first")
    k = spec.K if k is None else int(k)
    if not 0 <= k <= spec.K:
        raise ValueError(f"prefix length {k} outside 0..{spec.K}")
    w[k:] = 0.0
    if not np.any(w > 0):
        return 0.0, Scenario(np.zeros(spec.K))
    res = solve(oracle_lp(spec, w), settings)
    if not res.optimal:  # pragma: no cover - the polytope is nonempty and bounded
        raise RuntimeError(f"worst-case LP ended with status {res.status}")
    delta = res.primal
    return float(w @ delta), Scenario(delta)


def min_soc_slopes(x: MarketDecision, eta_plus: float, eta_minus: float) -> np.ndarray:
    """Per-interval SoC loss per unit of downward deviation, m_l."""
    delta_eta = 1.0 / eta_minus - eta_plus
    return np.maximum(eta_plus * x.x_r, x.x_r / eta_minus - delta_eta * x.x_b)


def _on_grid(x: MarketDecision, inst: ProblemInstance, spec: UncertaintyWindowSpec):
    """Decision and driving vectors expressed on the grid of ``spec``."""
    if spec.K == inst.K:
        return x.x_b, x.x_r, inst.profile.d
    N, rem = divmod(spec.K, inst.K)
    if rem or abs(spec.dt * N - inst.dt) > 1e-12:
        raise ValueError("uncertainty grid is neither the trading grid nor a refinement of it")
    rep = lambda v: np.repeat(v, N)
    return rep(x.x_b), rep(x.x_r), rep(inst.profile.d)


def worst_case_max_soc(x: MarketDecision, y0_hi: float, inst: ProblemInstance, spec: UncertaintyWindowSpec, k: int) -> float:
    """Largest SoC after ``k`` intervals of ``spec``'s grid over all scenarios in the set.

    ``spec`` may live on a refinement of the trading grid (see
    ``refine_subgrid``); the decision is then lifted by repetition.
    """
    xb, xr, d = _on_grid(x, inst, spec)
    eta = inst.battery.eta_plus
    base = np.sum(eta * xb[:k] - d[:k])
    wc, _ = worst_case_weighted_sum(spec, eta * xr, k)
    return float(y0_hi + spec.dt * (base + wc))


def worst_case_min_soc(x: MarketDecision, y0_lo: float, inst: ProblemInstance, spec: UncertaintyWindowSpec, k: int) -> float:
    """Smallest SoC after ``k`` intervals over all scenarios in the set."""
    xb, xr, d = _on_grid(x, inst, spec)
    b = inst.battery
    m = min_soc_slopes(MarketDecision(xb, xr), b.eta_plus, b.eta_minus)
    base = np.sum(b.eta_plus * xb[:k] - d[:k])
    wc, _ = worst_case_weighted_sum(spec, m, k)
    return float(y0_lo + spec.dt * (base - wc))


def soc_envelope(x: MarketDecision, y0: SoCInterval, inst: ProblemInstance, spec: UncertaintyWindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Worst-case (min, max) SoC at every interval boundary 0..K."""
    lo = np.array([worst_case_min_soc(x, y0.lo, inst, spec, k) for k in range(spec.K + 1)])
    hi = np.array([worst_case_max_soc(x, y0.hi, inst, spec, k) for k in range(spec.K + 1)])
    return lo, hi



def refine_subgrid(spec: UncertaintyWindowSpec, N) -> UncertaintyWindowSpec:
    """The same continuous-time set viewed on a grid N times finer."""
    N = N.N if isinstance(N, SubgridSpec) else SubgridSpec(N).N
    out = UncertaintyWindowSpec(spec.gamma, spec.Gamma, spec.dt / N, spec.K * N)
    assert out.w == N * spec.w and out.b == N * spec.b
    return out


def variance_bound(spec: UncertaintyWindowSpec) -> float:
    """Upper bound on (1/T) * integral of delta^2 over the horizon."""
    return math.ceil(spec.K / spec.w) * spec.b / spec.K


@dataclass(frozen=True)
class VarianceReport:
    max_observed: float
    bound: float
    n_scenarios: int
    ok: bool
    argmax: np.ndarray | None = None


def check_variance_bound(spec: UncertaintyWindowSpec, samples=None, cap: int = DEFAULT_ENUM_CAP, tol: float = 1e-12) -> VarianceReport:
    """Compare the empirical second moment of scenarios against the bound.

    Args:
        spec: the uncertainty set.
        samples: array (S, K) of scenarios; when omitted every binary point
            of D+_K is enumerated, which covers all vertices.
        cap: enumeration cap on K.
        tol: slack allowed in the comparison.
    """
    S = enumerate_binary_scenarios(spec, cap) if samples is None else np.atleast_2d(np.asarray(samples, float))
    if S.shape[1] != spec.K:
        raise ValueError("sample length does not match the spec")
    var = np.mean(np.asarray(S, float) ** 2, axis=1)
    i = int(np.argmax(var))
    bound = variance_bound(spec)
    return VarianceReport(float(var[i]), bound, int(S.shape[0]), bool(var[i] <= bound + tol), np.asarray(S[i], float))


def budget_set_max_variance(K: int, dt: float, beta: float, settings: SolveSettings | None = None) -> tuple[float, np.ndarray]:
    """Max of (1/K) * sum(delta^2) over the single-budget set sum|delta| <= beta/dt.

    On [0,1] the square never exceeds the identity, so the maximum is found
    by the LP ``max sum(delta)`` whose optimal vertex is binary.
    """
    B = as_multiple(beta, dt, "beta")
    bld = LPBuilder("budget_set")
    idx = bld.add_block("delta", K, lo=0.0, hi=1.0, cost=-1.0)
    bld.add_row("budget", idx, 1.0, LE, B)
    res = solve(bld.build(), settings)
    delta = res.primal
    return float(np.mean(delta**2)), delta
