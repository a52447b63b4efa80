"""Budget-constrained real-time coupon allocation.

Isotonic CVR calibration, Lagrangian dual fitting by trisection, per-arrival
coupon choice and PID pacing of the multiplier, plus a synthetic population
simulator and exact oracles for small instances.
"""

from .core import (
    TIE_TOL,
    BudgetError,
    LevelError,
    PriceLadder,
    argmax_level,
    check_budget,
    reduced_value,
)

__version__ = "0.1.0"

__all__ = [
    "TIE_TOL",
    "BudgetError",
    "LevelError",
    "PriceLadder",
    "argmax_level",
    "check_budget",
    "reduced_value",
]
