"""Domain types and exact battery/market dynamics.

Units are fixed throughout the package: power in kW, energy in kWh, time in
hours and money in EUR.  Every type is immutable after construction; numpy
arrays held by the dataclasses are flagged read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .uncertainty import UncertaintyWindowSpec


def as_multiple(value: float, unit: float, what: str = "value") -> int:
    """Return ``value / unit`` as an exact integer or raise ``ValueError``.

    Both numbers are snapped to the nearest rational with a denominator below
    10**6 so that e.g. 2.5 / 0.5 and (1/6) / (1/12) are recognised exactly.
    """
    num = Fraction(value).limit_denominator(10**6)
    den = Fraction(unit).limit_denominator(10**6)
    if den <= 0:
        raise ValueError(f"unit must be positive, got {unit}")
    ratio = num / den
    if ratio.denominator != 1:
        raise ValueError(f"{what}={value} is not an integer multiple of {unit}")
    return int(ratio)


def _frozen_vector(values, name: str, length: int | None = None) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridConfig:
    f0: float = 50.0
    delta_f: float = 0.2

    def __post_init__(self):
        if not self.f0 > 0:
            raise ValueError("f0 must be positive")
        if not self.delta_f > 0:
            raise ValueError("delta_f must be positive")


@dataclass(frozen=True)
class BatteryParams:
    y_min: float
    y_max: float
    eta_plus: float = 1.0
    eta_minus: float = 1.0

    def __post_init__(self):
        if not 0 <= self.y_min < self.y_max:
            raise ValueError(f"need 0 <= y_min < y_max, got {self.y_min}, {self.y_max}")
        for name in ("eta_plus", "eta_minus"):
            eta = getattr(self, name)
            if not 0 < eta <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {eta}")

    @property
    def delta_eta(self) -> float:
        """SoC lost by charging and then discharging one grid-side kWh."""
        return 1.0 / self.eta_minus - self.eta_plus


@dataclass(frozen=True)
class HorizonSpec:
    T: float
    dt: float
    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if as_multiple(self.T, self.dt, "T") != self.K:
            raise ValueError(f"K*dt must equal T exactly (K={self.K}, dt={self.dt}, T={self.T})")

    @classmethod
    def from_dt(cls, T: float, dt: float) -> "HorizonSpec":
        return cls(T=T, dt=dt, K=as_multiple(T, dt, "T"))


@dataclass(frozen=True)
class PeriodProfile:
    """Per-interval driving power and charger limits.

    Intervals with positive driving power are forced to have zero charger
    limits, because a driving vehicle is disconnected from the grid.
    """

    d: np.ndarray
    ybar_plus: np.ndarray
    ybar_minus: np.ndarray

    def __post_init__(self):
        d = _frozen_vector(self.d, "d")
        K = d.shape[0]
        yp = np.array(_frozen_vector(self.ybar_plus, "ybar_plus", K))
        ym = np.array(_frozen_vector(self.ybar_minus, "ybar_minus", K))
        if np.any(d < 0) or np.any(yp < 0) or np.any(ym < 0):
            raise ValueError("profile entries must be nonnegative")
        driving = d > 0
        yp[driving] = 0.0
        ym[driving] = 0.0
        yp.setflags(write=False)
        ym.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "ybar_plus", yp)
        object.__setattr__(self, "ybar_minus", ym)

    @property
    def K(self) -> int:
        return self.d.shape[0]

    @classmethod
    def constant(cls, K: int, charger_kw: float, d=None) -> "PeriodProfile":
        d = np.zeros(K) if d is None else d
        return cls(d=d, ybar_plus=np.full(K, charger_kw), ybar_minus=np.full(K, charger_kw))

    def slice(self, start: int, stop: int) -> "PeriodProfile":
        return PeriodProfile(self.d[start:stop], self.ybar_plus[start:stop], self.ybar_minus[start:stop])


@dataclass(frozen=True)
class PriceProfile:
    p_b: np.ndarray
    p_r: np.ndarray
    p_a: np.ndarray
    p_d: np.ndarray | None = None

    def __post_init__(self):
        p_b = _frozen_vector(self.p_b, "p_b")
        K = p_b.shape[0]
        object.__setattr__(self, "p_b", p_b)
        object.__setattr__(self, "p_r", _frozen_vector(self.p_r, "p_r", K))
        p_a = _frozen_vector(self.p_a, "p_a", K)
        if np.any(p_a < 0):
            raise ValueError("availability prices must be nonnegative")
        object.__setattr__(self, "p_a", p_a)
        if self.p_d is not None:
            # realized delivery prices may be sampled finer than the trading grid
            object.__setattr__(self, "p_d", _frozen_vector(self.p_d, "p_d"))

    @property
    def K(self) -> int:
        return self.p_b.shape[0]

    @classmethod
    def flat(cls, K: int, p_b: float, p_a: float) -> "PriceProfile":
        return cls(p_b=np.full(K, p_b), p_r=np.full(K, p_a), p_a=np.full(K, p_a))


@dataclass(frozen=True)
class TerminalTarget:
    y_star: float
    p_star: float

    def __post_init__(self):
        if self.p_star < 0:
            raise ValueError("p_star must be nonnegative")


@dataclass(frozen=True)
class SoCInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty SoC interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, y: float) -> "SoCInterval":
        return cls(y, y)


@dataclass(frozen=True)
class MarketDecision:
    x_b: np.ndarray
    x_r: np.ndarray

    def __post_init__(self):
        x_b = _frozen_vector(self.x_b, "x_b")
        x_r = _frozen_vector(self.x_r, "x_r", x_b.shape[0])
        if np.any(x_b < 0) or np.any(x_r < 0):
            raise ValueError("market decisions must be nonnegative")
        object.__setattr__(self, "x_b", x_b)
        object.__setattr__(self, "x_r", x_r)

    @property
    def K(self) -> int:
        return self.x_b.shape[0]

    @classmethod
    def zeros(cls, K: int) -> "MarketDecision":
        return cls(np.zeros(K), np.zeros(K))

    def slice(self, start: int, stop: int) -> "MarketDecision":
        return MarketDecision(self.x_b[start:stop], self.x_r[start:stop])

    def without_regulation(self) -> "MarketDecision":
        return MarketDecision(self.x_b, np.zeros_like(self.x_r))


@dataclass(frozen=True)
class ProblemInstance:
    """Everything needed to plan one day."""

    battery: BatteryParams
    horizon: HorizonSpec
    profile: PeriodProfile
    prices: PriceProfile
    target: TerminalTarget
    y0_hard: SoCInterval
    y0_soft: SoCInterval
    u_hard: "UncertaintyWindowSpec"
    u_soft: "UncertaintyWindowSpec"
    grid: GridConfig = field(default_factory=GridConfig)

    def __post_init__(self):
        K = self.horizon.K
        if self.profile.K != K or self.prices.K != K:
            raise ValueError("profile and prices must have one entry per trading interval")
        b = self.battery
        if not b.y_min <= self.target.y_star <= b.y_max:
            raise ValueError("target SoC outside [y_min, y_max]")
        for name in ("y0_hard", "y0_soft"):
            iv = getattr(self, name)
            if not (b.y_min - 1e-9 <= iv.lo and iv.hi <= b.y_max + 1e-9):
                raise ValueError(f"{name}=[{iv.lo}, {iv.hi}] not inside [{b.y_min}, {b.y_max}]")
        for name in ("u_hard", "u_soft"):
            spec = getattr(self, name)
            if spec.K != K or abs(spec.dt - self.horizon.dt) > 1e-12:
                raise ValueError(f"{name} does not match the planning horizon")
        if not (self.u_soft.gamma <= self.u_hard.gamma + 1e-12 and self.u_soft.Gamma >= self.u_hard.Gamma - 1e-12):
            raise ValueError("soft uncertainty set must be contained in the hard one (gamma_hat <= gamma, Gamma_hat >= Gamma)")

    @property
    def K(self) -> int:
        return self.horizon.K

    @property
    def dt(self) -> float:
        return self.horizon.dt

    def replace(self, **changes) -> "ProblemInstance":
        return replace(self, **changes)


def delta_from_frequency(f, grid: GridConfig):
    """Normalized, clipped frequency deviation in [-1, 1].

    Works on scalars and arrays; non-finite input is rejected.
    """
    arr = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("frequency contains non-finite values")
    out = np.clip((arr - grid.f0) / grid.delta_f, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def net_flow_split(x_b_k: float, x_r_k: float, delta_k: float) -> tuple[float, float]:
    """Split the net grid consumption into (charging, discharging) power."""
    if x_b_k < 0 or x_r_k < 0:
        raise ValueError("market decisions must be nonnegative")
    net = x_b_k + delta_k * x_r_k
    return max(net, 0.0), max(-net, 0.0)


def soc_trajectory(x: MarketDecision, delta, y0: float, inst: ProblemInstance) -> np.ndarray:
    """Planning-model state of charge at the interval boundaries.

    ``delta`` may be a single scenario of length K or a stack of scenarios of
    shape (S, K); the result then has shape (S, K + 1).  No clipping is applied.
    """
    K = inst.K
    delta = np.asarray(delta, dtype=float)
    if x.K != K or delta.shape[-1] != K:
        raise ValueError(f"dimension mismatch: decision K={x.K}, delta {delta.shape}, instance K={K}")
    b = inst.battery
    net = x.x_b + delta * x.x_r
    flow = np.minimum(b.eta_plus * net, net / b.eta_minus) - inst.profile.d
    y = y0 + inst.dt * np.cumsum(flow, axis=-1)
    pad = np.full(y.shape[:-1] + (1,), float(y0))
    return np.concatenate([pad, y], axis=-1)


def expected_cost(x: MarketDecision, prices: PriceProfile, horizon: HorizonSpec) -> float:
    if x.K != horizon.K or prices.K != horizon.K:
        raise ValueError("dimension mismatch between decision, prices and horizon")
    return float(horizon.dt * np.sum(prices.p_b * x.x_b - prices.p_r * x.x_r))
