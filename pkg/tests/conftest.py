import numpy as np
import pytest

from robust_v2g.data import NominalDefaults, SynthSpec, nominal_instance, synth_dataset
from robust_v2g.model import (
    BatteryParams,
    HorizonSpec,
    PeriodProfile,
    PriceProfile,
    ProblemInstance,
    SoCInterval,
    TerminalTarget,
)
from robust_v2g.uncertainty import UncertaintyWindowSpec


def make_instance(K=1, dt=1.0, eta=(1.0, 1.0), y=(0.0, 100.0), d=None, charger=10.0, p_b=0.1, p_r=0.0, p_a=None, y0=50.0, target=None, w=1, b=1, w_s=None, b_s=None, ybar_minus=None):
    """Small hand-checkable instance."""
    d = np.zeros(K) if d is None else np.asarray(d, float)
    up = np.where(d > 0, 0.0, charger)
    dn = up if ybar_minus is None else np.where(d > 0, 0.0, ybar_minus)
    y0 = y0 if isinstance(y0, SoCInterval) else SoCInterval.point(y0)
    target = target or TerminalTarget(y0.lo, 0.0)
    return ProblemInstance(
        battery=BatteryParams(y[0], y[1], *eta),
        horizon=HorizonSpec.from_dt(K * dt, dt),
        profile=PeriodProfile(d, up, dn),
        prices=PriceProfile(np.broadcast_to(p_b, K), np.broadcast_to(p_r, K), np.broadcast_to(p_r if p_a is None else p_a, K)),
        target=target,
        y0_hard=y0,
        y0_soft=y0,
        u_hard=UncertaintyWindowSpec(b * dt, w * dt, dt, K),
        u_soft=UncertaintyWindowSpec((b_s or b) * dt, (w_s or w) * dt, dt, K),
    )


@pytest.fixture
def instance_factory():
    return make_instance


@pytest.fixture(scope="session")
def nominal():
    return nominal_instance()


@pytest.fixture(scope="session")
def defaults():
    return NominalDefaults()


@pytest.fixture(scope="session")
def small_dataset():
    return synth_dataset(SynthSpec(days=3))
