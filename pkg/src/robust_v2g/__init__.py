"""Reliability-guaranteed V2G frequency-regulation bidding and backtesting."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    BatteryParams,
    GridConfig,
    HorizonSpec,
    MarketDecision,
    PeriodProfile,
    PriceProfile,
    ProblemInstance,
    SoCInterval,
    TerminalTarget,
)
from .robustlp import assemble_lp, solve_day, verify_robust_feasibility  # noqa: E402
from .solver import SolveSettings, solve  # noqa: E402
from .uncertainty import UncertaintyWindowSpec, worst_case_weighted_sum  # noqa: E402

__all__ = [
    "BatteryParams",
    "GridConfig",
    "HorizonSpec",
    "MarketDecision",
    "PeriodProfile",
    "PriceProfile",
    "ProblemInstance",
    "SoCInterval",
    "SolveSettings",
    "TerminalTarget",
    "UncertaintyWindowSpec",
    "assemble_lp",
    "solve",
    "solve_day",
    "verify_robust_feasibility",
    "worst_case_weighted_sum",
]
