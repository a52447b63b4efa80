"""Shared domain types and reduced-value arithmetic.

Levels are 1-indexed in the public helpers (level 1 is the smallest coupon,
i.e. the highest price).  The vectorised helpers work on 0-based column
indices because they are consumed by numpy code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TIE_TOL = 1e-9


class LevelError(ValueError):
    """Raised for a level index outside 1..J."""


class BudgetError(ValueError):
    """Raised when a budget floor is outside the ladder's price range."""


@dataclass(frozen=True)
class PriceLadder:
    """Discrete coupon ladder; prices are base_price minus each coupon."""

    base_price: float
    coupons: tuple[float, ...]
    prices: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        coupons = tuple(float(c) for c in self.coupons)
        object.__setattr__(self, "coupons", coupons)
        object.__setattr__(self, "base_price", float(self.base_price))
        if len(coupons) < 1:
            raise ValueError("ladder needs at least one level")
        if coupons[0] < 0:
            raise ValueError("coupon values must be non-negative")
        if any(b <= a for a, b in zip(coupons, coupons[1:])):
            raise ValueError("coupon values must be strictly increasing")
        prices = self.base_price - np.asarray(coupons, dtype=float)
        if prices[-1] <= 0:
            raise ValueError("every price must be positive")
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)

    @classmethod
    def default(cls) -> "PriceLadder":
        """The CNY 8..16 ladder in steps of 2."""
        return cls(16.0, (0.0, 2.0, 4.0, 6.0, 8.0))

    @property
    def J(self) -> int:
        return len(self.coupons)

    def price(self, level: int) -> float:
        self._check(level)
        return float(self.prices[level - 1])

    def coupon(self, level: int) -> float:
        self._check(level)
        return self.coupons[level - 1]

    def level_of_price(self, price: float, atol: float = 1e-9) -> int:
        """Inverse of ``price``; raises LevelError for off-ladder prices."""
        hit = np.nonzero(np.abs(self.prices - float(price)) <= atol)[0]
        if hit.size == 0:
            raise LevelError(f"price {price} is not on the ladder")
        return int(hit[0]) + 1

    def levels_of_prices(self, prices) -> np.ndarray:
        """Vectorised 0-based column index for an array of ladder prices."""
        prices = np.asarray(prices, dtype=float)
        idx = np.searchsorted(-self.prices, -prices)
        idx = np.clip(idx, 0, self.J - 1)
        if not np.allclose(self.prices[idx], prices, atol=1e-9, rtol=0):
            raise LevelError("some prices are not on the ladder")
        return idx

    def _check(self, level: int):
        if not 1 <= level <= self.J:
            raise LevelError(f"level {level} outside 1..{self.J}")

    def to_dict(self) -> dict:
        return {"base_price": self.base_price, "coupons": list(self.coupons)}


def check_budget(ladder: PriceLadder, p_b: float) -> float:
    """Validate a budget floor against the ladder and return it as float."""
    p_b = float(p_b)
    if not np.isfinite(p_b):
        raise BudgetError("p_b must be finite")
    if p_b < ladder.prices.min() - 1e-12:
        raise BudgetError(f"p_b={p_b} below the lowest price: constraint infeasible")
    if p_b > ladder.base_price + 1e-12:
        raise BudgetError(f"p_b={p_b} above the base price: constraint infeasible")
    return p_b


def reduced_value(v: Sequence[float], q: Sequence[float], ladder: PriceLadder,
                  p_b: float, lam: float, j: int) -> float:
    """V(j) = v[j] - lam * q[j] * (p_b - p[j]) for a 1-indexed level j."""
    ladder._check(j)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    k = j - 1
    return float(v[k]) - lam * float(q[k]) * (p_b - float(ladder.prices[k]))


def reduced_values(v: np.ndarray, q: np.ndarray, prices: np.ndarray,
                   p_b: float, lam: float) -> np.ndarray:
    """Matrix form of reduced_value; works row-wise on (N, J) arrays."""
    return v + lam * (q * (np.asarray(prices) - p_b))


def argmax_rows(V: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """0-based argmax per row, ties within tol go to the lowest index."""
    V = np.atleast_2d(V)
    top = V.max(axis=1, keepdims=True)
    return np.argmax(V >= top - tol, axis=1)


def argmax_level(v: Sequence[float], q: Sequence[float], ladder: PriceLadder,
                 p_b: float, lam: float, tol: float = TIE_TOL) -> int:
    """Best 1-indexed level under reduced values, lowest coupon on ties."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    v = np.asarray(v, dtype=float)
    q = np.asarray(q, dtype=float)
    if v.shape != (ladder.J,) or q.shape != (ladder.J,):
        raise LevelError("vector length does not match the ladder")
    V = reduced_values(v, q, ladder.prices, p_b, lam)
    return int(argmax_rows(V[None, :], tol)[0]) + 1


def revenue_values(q: np.ndarray, prices: np.ndarray) -> np.ndarray:
    """Revenue objective v = p * q."""
    return np.asarray(q, dtype=float) * np.asarray(prices, dtype=float)


def check_cvr(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
        raise ValueError("CVR values must lie in [0, 1]")
    return q
