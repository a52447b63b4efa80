"""Day-level marketplace simulation of the coupon strategies.

Decisions are made per control interval: within one PID step lambda is fixed,
so all arrivals of that interval can be decided together, which is identical
to deciding them one by one.  Purchases always resolve against the ground
truth threshold rule at the offered price.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import pid
from .core import PriceLadder, argmax_rows
from .cvr import CvrModel, fit_arrays
from .dual import Instance, fit_lambda_trisection, offline_ip_group, solve
from .isotonic import calibrate_population
from .synthpop import (DAY_SECONDS, SCENARIOS, SEGMENTS, Population, apply_campaign,
                       arrival_times, sample_day, true_purchase)

KINDS = ("random", "manual", "ipgroup", "ldm", "ldmir")

# segment -> 1-based level; frequent riders get small coupons
DEFAULT_MANUAL_TABLE = {"churned": 5, "new": 4, "low_freq": 3,
                        "medium_freq": 2, "high_freq": 1}


class ConfigError(ValueError):
    pass


def seed_for(*keys: int) -> int:
    """Stable 32-bit seed derived from integer keys."""
    return int(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]).generate_state(1)[0])


@dataclass
class Strategy:
    kind: str
    groups: int = 200
    pid: bool = True
    table: dict | None = None
    phi: float = 0.25

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown strategy {self.kind!r}")
        if self.kind == "manual":
            table = self.table or DEFAULT_MANUAL_TABLE
            missing = set(SEGMENTS) - set(table)
            if missing:
                raise ConfigError(f"manual table misses segments {sorted(missing)}")
            self.table = dict(table)

    @property
    def label(self) -> str:
        if self.kind == "ipgroup":
            return f"ipgroup:{self.groups}"
        if self.kind in ("ldm", "ldmir") and not self.pid:
            return f"{self.kind}:nopid"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        name, _, arg = text.strip().partition(":")
        if name == "ipgroup":
            return cls("ipgroup", groups=int(arg or 200))
        if name in ("ldm", "ldmir"):
            if arg not in ("", "pid", "nopid"):
                raise ConfigError(f"bad option {arg!r} for {name}")
            return cls(name, pid=(arg != "nopid"))
        if arg:
            raise ConfigError(f"{name} takes no option")
        return cls(name)


@dataclass
class Predictor:
    """Raw binned model plus its calibrated table, pre-indexed for a population."""

    model: CvrModel
    calibrated: np.ndarray
    cells: np.ndarray

    def raw(self, ids) -> np.ndarray:
        return self.model.table[self.cells[ids]]

    def ir(self, ids) -> np.ndarray:
        return self.calibrated[self.cells[ids]]


def train_predictor(pop: Population, scenario: str = "basic", seed: int = 0,
                    bins: int = 20) -> Predictor:
    """Fit the binned model on one campaign-priced history day of ``pop``."""
    prices, _ = apply_campaign(pop, SCENARIOS[scenario], seed)
    y = true_purchase(pop.f1, pop.f2, prices)
    model = fit_arrays(pop.f1, pop.f2, prices, y, bins, pop.ladder)
    return Predictor(model, calibrate_population(model.table), model.cells(pop.f1, pop.f2))


@dataclass
class DayInputs:
    ids: np.ndarray
    times: np.ndarray

    @classmethod
    def sample(cls, pop: Population, seed: int, day: int, profile: str = "uniform",
               show_up=None) -> "DayInputs":
        ids = sample_day(pop, seed_for(seed, day, 1), show_up)
        return cls(ids, arrival_times(len(ids), seed_for(seed, day, 2), profile))


@dataclass
class StrategyRun:
    label: str
    cols: np.ndarray
    bought: np.ndarray
    lam: np.ndarray  # lambda snapshot per arrival (nan when not applicable)
    latency_us: np.ndarray
    trace: list = field(default_factory=list)

    def p_T(self, prices) -> float | None:
        n = int(self.bought.sum())
        return float(prices[self.cols][self.bought].sum() / n) if n else None


def _intervals(times: np.ndarray, dt: float) -> np.ndarray:
    if len(times) == 0:
        return np.zeros(1, dtype=np.int64)
    nsteps = int(np.floor(times[-1] / dt)) + 1
    return np.searchsorted(times, np.arange(nsteps + 1) * dt)


def run_ldm(q, v, f1, f2, times, ladder: PriceLadder, p_b: float, lam0: float,
            cfg: pid.PidConfig, label: str = "ldm") -> StrategyRun:
    """Closed-loop LDM over one day; gains of zero give the open-loop rule."""
    prices = ladder.prices
    bq = q * (prices - p_b)
    n = len(q)
    cols = np.zeros(n, dtype=np.int64)
    bought = np.zeros(n, dtype=bool)
    lam_at = np.zeros(n)
    lat = np.zeros(n)
    state = pid.init(lam0, cfg, p_b)
    edges = _intervals(times, cfg.dt)
    trace = []
    for s in range(len(edges) - 1):
        a, b = edges[s], edges[s + 1]
        if b > a:
            t0 = time.perf_counter()
            c = argmax_rows(v[a:b] + state.lam * bq[a:b])
            lat[a:b] = (time.perf_counter() - t0) * 1e6 / (b - a)
            cols[a:b] = c
            lam_at[a:b] = state.lam
            y = true_purchase(f1[a:b], f2[a:b], prices[c])
            bought[a:b] = y
            pid.record_many(state, prices[c], y)
        pid.step(state, cfg)
        trace.append((state.t, state.lam, state.p_t, state.last_error))
    return StrategyRun(label, cols, bought, lam_at, lat, trace)


def run_manual(seg, f1, f2, times, ladder: PriceLadder, p_b: float, table: dict,
               phi: float = 0.25, dt: float = 60.0,
               day_seconds: float = DAY_SECONDS) -> StrategyRun:
    """Segment table with a one-level correction in the last phi of the day."""
    base = np.array([table[name] - 1 for name in SEGMENTS])[seg]
    prices = ladder.prices
    n = len(seg)
    cols = np.zeros(n, dtype=np.int64)
    bought = np.zeros(n, dtype=bool)
    lat = np.zeros(n)
    psum, pcount = 0.0, 0
    edges = _intervals(times, dt)
    start = (1.0 - phi) * day_seconds
    for s in range(len(edges) - 1):
        a, b = edges[s], edges[s + 1]
        if b == a:
            continue
        t0 = time.perf_counter()
        c = base[a:b]
        if s * dt >= start and pcount:
            pt = psum / pcount
            if pt < p_b:
                c = np.maximum(c - 1, 0)
            elif pt > p_b:
                c = np.minimum(c + 1, ladder.J - 1)
        lat[a:b] = (time.perf_counter() - t0) * 1e6 / (b - a)
        cols[a:b] = c
        y = true_purchase(f1[a:b], f2[a:b], prices[c])
        bought[a:b] = y
        psum += float(prices[c][y].sum())
        pcount += int(y.sum())
    return StrategyRun("manual", cols, bought, np.full(n, np.nan), lat)


def run_fixed(label: str, cols, f1, f2, ladder: PriceLadder) -> StrategyRun:
    """Strategies whose levels are known up front (random, group IP)."""
    cols = np.asarray(cols, dtype=np.int64)
    y = true_purchase(f1, f2, ladder.prices[cols])
    n = len(cols)
    return StrategyRun(label, cols, y, np.full(n, np.nan), np.zeros(n))


def lambda_from_history(pop: Population, q_of, p_b: float, days: int, seed: int,
                        first_day: int = -1) -> float:
    """Fit lambda on the pooled arrivals of ``days`` earlier days.

    ``q_of(ids)`` returns the CVR matrix used by the strategy.
    """
    if days < 1:
        raise ValueError("need at least one history day")
    ids = np.concatenate([sample_day(pop, seed_for(seed, first_day - k, 1))
                          for k in range(days)])
    q = q_of(ids)
    inst = Instance(q, q * pop.ladder.prices, pop.ladder, p_b, check_monotone=False)
    return fit_lambda_trisection(inst).lam


def estimate_show_up(pop: Population, seed: int, days: int, first_day: int = -1) -> np.ndarray:
    """Smoothed arrival frequency over earlier days."""
    hits = np.zeros(len(pop))
    for k in range(days):
        hits[sample_day(pop, seed_for(seed, first_day - k, 1))] += 1
    return (hits + 1.0) / (days + 2.0)


@dataclass
class DayReport:
    day: int
    rows: list  # one dict per strategy

    def to_csv_rows(self):
        for r in self.rows:
            yield {k: r[k] for k in REPORT_FIELDS}


REPORT_FIELDS = ("day", "strategy", "exposed", "cvr", "avg_price", "avg_price_x_cvr",
                 "pb_deviation", "used_prices", "lambda_hat")


def summarize(day: int, run: StrategyRun, ids, pop: Population, p_b: float,
              lam_hat=None) -> dict:
    prices = pop.ladder.prices
    n = len(run.cols)
    buys = int(run.bought.sum())
    cvr = buys / n if n else 0.0
    pT = run.p_T(prices)
    seg = pop.segment[ids]
    seg_cvr = {}
    for k, name in enumerate(SEGMENTS):
        m = seg == k
        seg_cvr[name] = float(run.bought[m].mean()) if m.any() else None
    hist = np.bincount(run.cols, minlength=pop.ladder.J) if n else np.zeros(pop.ladder.J, int)
    return {
        "day": day, "strategy": run.label, "exposed": n, "cvr": cvr,
        "avg_price": pT, "avg_price_x_cvr": (pT or 0.0) * cvr,
        "pb_deviation": None if pT is None else (pT - p_b) / p_b,
        "used_prices": int((hist > 0).sum()),
        "lambda_hat": lam_hat,
        "segment_cvr": seg_cvr,
        "price_histogram": {f"{p:g}": int(c) for p, c in zip(prices, hist)},
    }


def run_day(pop: Population, strategies, predictor: Predictor, p_b: float, day: int,
            seed: int, lam_hats: dict | None = None, history_days: int = 3,
            pid_gains=(pid.DEFAULT_KP, pid.DEFAULT_KI, pid.DEFAULT_KD),
            dt: float = 60.0, profile: str = "uniform"):
    """Simulate one day for every strategy on a shared arrival sequence.

    Returns (DayReport, runs, inputs).  lam_hats maps strategy labels to
    fixed multipliers; missing LDM entries are fitted from history days.
    """
    lam_hats = dict(lam_hats or {})
    inp = DayInputs.sample(pop, seed, day, profile)
    ids, times = inp.ids, inp.times
    f1, f2 = pop.f1[ids], pop.f2[ids]
    rows, runs = [], []
    for st in strategies:
        lam_hat = None
        if st.kind == "random":
            rng = np.random.default_rng(seed_for(seed, day, 3))
            run = run_fixed("random", rng.integers(0, pop.ladder.J, len(ids)), f1, f2, pop.ladder)
        elif st.kind == "manual":
            run = run_manual(pop.segment[ids], f1, f2, times, pop.ladder, p_b, st.table, st.phi, dt)
        elif st.kind == "ipgroup":
            s_hat = estimate_show_up(pop, seed, history_days, day - 1)
            q = predictor.ir(pop.ids)
            inst = Instance(q, q * pop.ladder.prices, pop.ladder, p_b, w=s_hat)
            gs = offline_ip_group(inst, min(st.groups, len(pop)), seed_for(seed, day, 4))
            run = run_fixed(st.label, gs.cols[ids], f1, f2, pop.ladder)
            lam_hat = gs.lam
        else:
            q_of = predictor.ir if st.kind == "ldmir" else predictor.raw
            lam_hat = lam_hats.get(st.label)
            if lam_hat is None:
                lam_hat = lambda_from_history(pop, q_of, p_b, history_days, seed, day - 1)
            q = q_of(ids)
            cfg = (pid.PidConfig.scaled(lam_hat, p_b, *pid_gains, dt=dt) if st.pid
                   else pid.PidConfig(dt=dt))
            run = run_ldm(q, q * pop.ladder.prices, f1, f2, times, pop.ladder, p_b,
                          lam_hat, cfg, st.label)
        rows.append(summarize(day, run, ids, pop, p_b, lam_hat))
        runs.append(run)
    return DayReport(day, rows), runs, inp


def misspecification_sweep(q, f1, f2, times, ladder: PriceLadder, p_b: float,
                           deviations=(-0.024, -0.077), pid_gains=None, dt: float = 60.0,
                           lam_star: float | None = None):
    """Table-style report of multiplier errors with and without PID.

    The reference run uses the multiplier fitted on the same day's arrivals
    with PID off; each row perturbs it by (1 + d).
    """
    v = q * ladder.prices
    if lam_star is None:
        inst = Instance(q, v, ladder, p_b, check_monotone=False)
        lam_star = fit_lambda_trisection(inst).lam
    gains = pid_gains or (pid.DEFAULT_KP, pid.DEFAULT_KI, pid.DEFAULT_KD)
    base = run_ldm(q, v, f1, f2, times, ladder, p_b, lam_star, pid.PidConfig(dt=dt))
    r = np.arange(len(q))
    base_obj = float(v[r, base.cols].sum())
    rows = []
    for d in deviations:
        for on in (False, True):
            cfg = pid.PidConfig.scaled(lam_star, p_b, *gains, dt=dt) if on else pid.PidConfig(dt=dt)
            run = run_ldm(q, v, f1, f2, times, ladder, p_b, lam_star * (1 + d), cfg)
            pT = run.p_T(ladder.prices)
            rows.append({
                "deviation": d, "pid": on,
                "deviated_share": float((run.cols != base.cols).mean()),
                "objective_deviation": float(v[r, run.cols].sum()) / base_obj - 1.0,
                "pb_deviation": (pT - p_b) / p_b,
                "lambda_end": run.trace[-1][1] if run.trace else lam_star,
            })
    return lam_star, rows


def write_outputs(out_dir, reports, decision_rows, traces) -> None:
    """day_report.csv, decisions.jsonl and lambda_trace.csv under out_dir."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "day_report.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=REPORT_FIELDS + ("segment_cvr", "price_histogram"))
        wr.writeheader()
        for rep in reports:
            for r in rep.rows:
                row = dict(r)
                row["segment_cvr"] = json.dumps(r["segment_cvr"], sort_keys=True)
                row["price_histogram"] = json.dumps(r["price_histogram"], sort_keys=True)
                wr.writerow(row)
    with open(out / "decisions.jsonl", "w") as fh:
        for rec in decision_rows:
            fh.write(json.dumps(rec) + "\n")
    with open(out / "lambda_trace.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["day", "strategy", "t", "lambda", "p_t", "e_t"])
        for (day, label), rows in traces.items():
            for t, lam, pt, e in rows:
                wr.writerow([day, label, f"{t:g}", repr(float(lam)),
                             "" if pt is None else repr(float(pt)), repr(float(e))])


def decision_records(day: int, run: StrategyRun, ids, ladder: PriceLadder):
    prices = ladder.prices
    for k in range(len(ids)):
        lam = run.lam[k]
        yield {"day": day, "arrival": k, "customer_id": int(ids[k]), "strategy": run.label,
               "level": int(run.cols[k]) + 1, "price": float(prices[run.cols[k]]),
               "lambda": None if np.isnan(lam) else float(lam),
               "purchased": bool(run.bought[k]), "latency_us": float(run.latency_us[k])}


def simulate(pop: Population, strategies, p_b: float, days: int, seed: int,
             history_days: int = 3, bins: int = 20, profile: str = "uniform"):
    """Multi-day driver; returns (reports, decision record iterator, traces)."""
    predictor = train_predictor(pop, "basic", seed_for(seed, 0, 9), bins)
    reports, decisions, traces = [], [], {}
    for day in range(days):
        rep, runs, inp = run_day(pop, strategies, predictor, p_b, day, seed,
                                 history_days=history_days, profile=profile)
        reports.append(rep)
        for run in runs:
            decisions.extend(decision_records(day, run, inp.ids, pop.ladder))
            if run.trace:
                traces[(day, run.label)] = run.trace
    return reports, decisions, traces
