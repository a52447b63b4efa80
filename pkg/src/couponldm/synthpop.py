"""Synthetic customer population with a deterministic threshold purchase rule.

Customers carry a base-utility feature f1 ~ N(0, 1) and a price coefficient
f2 ~ LogNormal(0, 1).  A customer buys at price p iff 10*f1 - f2*p > -6.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PriceLadder

SEGMENTS = ("churned", "new", "low_freq", "medium_freq", "high_freq")
UTILITY_THRESHOLD = -6.0
DAY_SECONDS = 16 * 3600.0


@dataclass(frozen=True)
class Customer:
    id: int
    f1: float
    f2: float
    show_up: float
    segment: str


@dataclass
class Population:
    """Column-oriented population; ``customer(i)`` gives a row view."""

    f1: np.ndarray
    f2: np.ndarray
    show_up: np.ndarray
    segment: np.ndarray  # index into SEGMENTS
    ladder: PriceLadder
    seed: int | None = None

    def __post_init__(self):
        n = len(self.f1)
        for name in ("f2", "show_up", "segment"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has the wrong length")
        if np.any(self.f2 <= 0):
            raise ValueError("f2 must be positive")
        if np.any(self.show_up <= 0) or np.any(self.show_up > 1):
            raise ValueError("show-up probabilities must lie in (0, 1]")

    def __len__(self):
        return len(self.f1)

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self), dtype=np.int64)

    def customer(self, i: int) -> Customer:
        return Customer(int(i), float(self.f1[i]), float(self.f2[i]),
                        float(self.show_up[i]), SEGMENTS[int(self.segment[i])])

    def customers(self):
        return [self.customer(i) for i in range(len(self))]

    def duplicated(self, times: int = 2) -> "Population":
        """Every customer repeated ``times`` times (same mass shape)."""
        rep = lambda a: np.tile(a, times)
        return Population(rep(self.f1), rep(self.f2), rep(self.show_up),
                          rep(self.segment), self.ladder, self.seed)


def assign_segments(f1: np.ndarray) -> np.ndarray:
    """Quintiles of the f1 rank stand in for ride frequency."""
    n = len(f1)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    rank = np.empty(n, dtype=np.int64)
    rank[np.argsort(f1, kind="stable")] = np.arange(n)
    return (rank * len(SEGMENTS)) // n


def generate_population(size: int, seed: int, ladder: PriceLadder | None = None,
                        show_up_range=(0.05, 0.6)) -> Population:
    if size < 1:
        raise ValueError("size must be at least 1")
    rng = np.random.default_rng(seed)
    f1 = rng.standard_normal(size)
    f2 = rng.lognormal(0.0, 1.0, size)
    lo, hi = show_up_range
    s = rng.uniform(lo, hi, size)
    return Population(f1, f2, s, assign_segments(f1),
                      ladder or PriceLadder.default(), seed)


def true_utility(f1, f2, price):
    """10*f1 - f2*price; scalars or broadcastable arrays."""
    return 10.0 * np.asarray(f1, dtype=float) - np.asarray(f2, dtype=float) * np.asarray(price, dtype=float) \
        if np.ndim(f1) or np.ndim(f2) or np.ndim(price) else 10.0 * f1 - f2 * price


def true_purchase(f1, f2, price):
    """Strict threshold rule; no noise term."""
    return true_utility(f1, f2, price) > UTILITY_THRESHOLD


def true_cvr_matrix(pop: Population, idx=None) -> np.ndarray:
    """0/1 ground-truth purchase matrix (N, J) for the given customers."""
    idx = slice(None) if idx is None else idx
    return true_purchase(pop.f1[idx, None], pop.f2[idx, None],
                         pop.ladder.prices[None, :]).astype(float)


@dataclass(frozen=True)
class CampaignScenario:
    level: str
    target_fraction: float
    campaign_price: float = 8.0

    def __post_init__(self):
        if not 0.0 <= self.target_fraction <= 1.0:
            raise ValueError("target_fraction must be a probability")
        if self.level == "basic" and self.target_fraction != 0.0:
            raise ValueError("the basic scenario has no targeting")


# Fractions chosen so that the covered share lands near 10.35%, 25.03% and
# 71.90% of the population; about 71% of customers do not buy at a uniformly
# drawn price, so full targeting covers at most that share.
SCENARIOS = {
    "basic": CampaignScenario("basic", 0.0),
    "low": CampaignScenario("low", 0.1457),
    "medium": CampaignScenario("medium", 0.3523),
    "high": CampaignScenario("high", 1.0),
}


def apply_campaign(pop: Population, scenario: CampaignScenario, seed: int):
    """Uniform baseline prices, then campaign price for a random share of non-buyers.

    Returns (prices, targeted_mask).  The same draws are consumed whatever the
    scenario so the basic assignment equals the uniform baseline.
    """
    rng = np.random.default_rng(seed)
    prices = pop.ladder.prices[rng.integers(0, pop.ladder.J, len(pop))]
    u = rng.random(len(pop))
    nonbuy = ~true_purchase(pop.f1, pop.f2, prices)
    targeted = nonbuy & (u < scenario.target_fraction)
    prices = prices.copy()
    prices[targeted] = np.minimum(prices[targeted], scenario.campaign_price)
    return prices, targeted


def sample_day(pop: Population, day_seed: int, show_up=None) -> np.ndarray:
    """Customer ids arriving on one day, in shuffled arrival order."""
    rng = np.random.default_rng(day_seed)
    s = pop.show_up if show_up is None else show_up
    ids = np.nonzero(rng.random(len(pop)) < s)[0]
    rng.shuffle(ids)
    return ids


def two_regime_show_up(pop: Population, day: int, weekend_scale: float = 0.4):
    """Weekday/weekend show-up: weekends scale probabilities down."""
    if day % 7 in (5, 6):
        return np.clip(pop.show_up * weekend_scale, 1e-6, 1.0)
    return pop.show_up


def arrival_times(n: int, seed: int, profile: str = "uniform",
                  day_seconds: float = DAY_SECONDS) -> np.ndarray:
    """Sorted arrival timestamps in seconds since the day opened."""
    rng = np.random.default_rng(seed)
    if profile == "uniform":
        t = rng.random(n) * day_seconds
    elif profile == "bimodal":
        # commute peaks at 2h and 11h into the day
        peak = np.where(rng.random(n) < 0.5, 2.0, 11.0) * 3600.0
        t = np.clip(peak + rng.normal(0.0, 1.5 * 3600.0, n), 0.0, day_seconds - 1e-6)
    else:
        raise ValueError(f"unknown arrival profile {profile!r}")
    return np.sort(t)


def save_population(pop: Population, path) -> None:
    with open(path, "w") as fh:
        for i in range(len(pop)):
            c = pop.customer(i)
            fh.write(json.dumps({"id": c.id, "f1": c.f1, "f2": c.f2,
                                 "show_up": c.show_up, "segment": c.segment}) + "\n")


def load_population(path, ladder: PriceLadder | None = None) -> Population:
    rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows:
        raise ValueError(f"{path}: empty population file")
    rows.sort(key=lambda r: r["id"])
    seg = {name: k for k, name in enumerate(SEGMENTS)}
    return Population(
        np.array([r["f1"] for r in rows], dtype=float),
        np.array([r["f2"] for r in rows], dtype=float),
        np.array([r.get("show_up", 1.0) for r in rows], dtype=float),
        np.array([seg[r["segment"]] for r in rows], dtype=np.int64),
        ladder or PriceLadder.default(),
    )


def save_records(pop: Population, prices, path) -> None:
    """Training records (features, offered price, outcome) as JSON lines."""
    bought = true_purchase(pop.f1, pop.f2, prices)
    with open(path, "w") as fh:
        for i in range(len(pop)):
            fh.write(json.dumps({"id": i, "f1": float(pop.f1[i]), "f2": float(pop.f2[i]),
                                 "price": float(prices[i]),
                                 "purchased": bool(bought[i])}) + "\n")
