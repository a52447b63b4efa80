"""Lagrangian dual fitting, primal rounding and exact oracles.

The budget constraint is used in cleared linear form

    sum_i w_i * q_ij * (p_j - p_b) >= 0

and relaxed with a multiplier lam >= 0.  Each customer then maximises the
reduced value V_ij = v_ij + lam * b_ij with b_ij = q_ij (p_j - p_b).  The dual
function D(lam) = sum_i w_i max_j V_ij is convex and piecewise linear and
upper-bounds every feasible primal objective; trisection finds its minimiser.
Array assignments in this module are 0-based column indices unless named
``levels``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .core import TIE_TOL, PriceLadder, argmax_rows, check_budget, check_cvr


class DegenerateBudgetError(ValueError):
    pass


class SizeError(ValueError):
    pass


@dataclass
class Instance:
    """Customers (or weighted groups) facing one ladder and budget floor."""

    q: np.ndarray
    v: np.ndarray
    ladder: PriceLadder
    p_b: float
    w: np.ndarray | None = None
    check_monotone: bool = True
    b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.q = check_cvr(np.atleast_2d(np.asarray(self.q, dtype=float)))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.q.shape != self.v.shape:
            raise ValueError("q and v must have the same shape")
        if self.q.shape[0] == 0:
            raise ValueError("instance has no customers")
        if self.q.shape[1] != self.ladder.J:
            raise ValueError("CVR width does not match the ladder")
        if not np.all(np.isfinite(self.v)):
            raise ValueError("values must be finite")
        if self.check_monotone and np.any(np.diff(self.q, axis=1) < -1e-12):
            bad = int(np.nonzero(np.any(np.diff(self.q, axis=1) < -1e-12, axis=1))[0][0])
            raise ValueError(f"customer row {bad}: CVR rises with price; calibrate first")
        self.p_b = check_budget(self.ladder, self.p_b)
        if self.w is None:
            self.w = np.ones(self.q.shape[0])
        else:
            self.w = np.asarray(self.w, dtype=float)
            if self.w.shape != (self.q.shape[0],) or np.any(self.w <= 0):
                raise ValueError("weights must be positive, one per customer")
        self.b = self.q * (self.ladder.prices - self.p_b)

    @property
    def N(self) -> int:
        return self.q.shape[0]

    @property
    def J(self) -> int:
        return self.q.shape[1]

    def reduced(self, lam: float) -> np.ndarray:
        return self.v + lam * self.b

    def objective(self, cols) -> float:
        return float(np.dot(self.w, self.v[np.arange(self.N), cols]))

    def slack(self, cols) -> float:
        """Weighted budget slack; feasible when >= 0."""
        return float(np.dot(self.w, self.b[np.arange(self.N), cols]))

    def avg_price(self, cols) -> float:
        """Expected average price over expected purchases."""
        qq = self.w * self.q[np.arange(self.N), cols]
        return float(np.dot(qq, self.ladder.prices[cols]) / qq.sum())


def revenue_instance(q, ladder: PriceLadder, p_b: float, w=None,
                     check_monotone: bool = True) -> Instance:
    q = np.atleast_2d(np.asarray(q, dtype=float))
    return Instance(q, q * ladder.prices, ladder, p_b, w, check_monotone)


@dataclass
class DualSolution:
    lam: float
    objective: float
    cols: np.ndarray
    mu: np.ndarray
    fractional_ties: list
    bracket: tuple
    iterations: int = 0

    @property
    def levels(self) -> np.ndarray:
        return self.cols + 1


@dataclass
class PrimalSolution:
    cols: np.ndarray
    objective: float
    slack: float
    lam: float
    repaired: int = 0

    @property
    def levels(self) -> np.ndarray:
        return self.cols + 1

    @property
    def feasible(self) -> bool:
        return self.slack >= -1e-9


@dataclass
class OracleSolution:
    objective: float
    cols: np.ndarray | None
    feasible: bool

    @property
    def levels(self):
        return None if self.cols is None else self.cols + 1


def dual_objective(inst: Instance, lam: float, tol: float = TIE_TOL):
    """(D(lam), argmax columns) with lowest-coupon tie-break."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    V = inst.reduced(lam)
    return float(np.dot(inst.w, V.max(axis=1))), argmax_rows(V, tol)


def _dual_value(inst: Instance, lam: float) -> float:
    return float(np.dot(inst.w, (inst.v + lam * inst.b).max(axis=1)))


def _crude_lambda_high(inst: Instance) -> float:
    """Beyond this no below-budget level can win any argmax."""
    below = inst.ladder.prices < inst.p_b
    if not below.any():
        raise DegenerateBudgetError("no ladder price lies below p_b; the budget never binds")
    spread = inst.v - inst.v.min(axis=1, keepdims=True)
    cost = -inst.b[:, below]  # q (p_b - p) >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(cost > 0, spread[:, below] / cost, 0.0)
    return float(ratio.max()) + 1.0


def _right_slope(inst: Instance, lam: float) -> float:
    """Right derivative of the dual, i.e. the budget slack just above lam."""
    return inst.slack(_right_cols(inst, lam))


def default_lambda_bounds(inst: Instance) -> tuple[float, float]:
    """(0, hi) with the optimal multiplier inside.

    Starts from a crude bound and halves it while the dual still rises to the
    right of the halved point, so hi ends within a factor two of the optimum.
    """
    hi = _crude_lambda_high(inst)
    for _ in range(60):
        if _right_slope(inst, 0.5 * hi) < 0:
            break
        hi *= 0.5
    return 0.0, hi


def fit_lambda_trisection(inst: Instance, lam_low: float | None = None,
                          lam_high: float | None = None, eps: float | None = None,
                          tie_tol: float = TIE_TOL) -> DualSolution:
    """Trisection on the convex dual; returns the midpoint of the last bracket.

    When the budget already holds at lam_low the search stops there.
    """
    if lam_low is None or lam_high is None:
        lo, hi = default_lambda_bounds(inst)
        lam_low = lo if lam_low is None else lam_low
        lam_high = hi if lam_high is None else lam_high
    if eps is None:
        eps = 1e-6 * lam_high
    vals = (lam_low, lam_high, eps)
    if not all(np.isfinite(x) for x in vals):
        raise ValueError("bounds and eps must be finite")
    if lam_low < 0 or not lam_low < lam_high or eps <= 0:
        raise ValueError("need 0 <= lam_low < lam_high and eps > 0")
    l1, l4 = float(lam_low), float(lam_high)
    it = 0
    if _right_slope(inst, l1) >= 0:
        # the budget is met at the lower bound: the dual rises from there
        l4 = l1
    while l4 - l1 > eps:
        l2 = l1 + (l4 - l1) / 3.0
        l3 = l1 + 2.0 * (l4 - l1) / 3.0
        if _dual_value(inst, l2) <= _dual_value(inst, l3):
            l4 = l3
        else:
            l1 = l2
        it += 1
    lam = 0.5 * (l1 + l4)
    V = inst.reduced(lam)
    mu = V.max(axis=1)
    cols = argmax_rows(V, tie_tol)
    ties = fractionality_report(inst, lam, tie_tol)
    return DualSolution(lam, float(np.dot(inst.w, mu)), cols, mu, ties, (l1, l4), it)


def fractionality_report(inst: Instance, lam: float, tol: float = TIE_TOL) -> list:
    """Customers whose two best reduced values are within tol.

    Returns [(row, (level, level, ...)), ...] with 1-based levels.
    """
    if inst.J < 2:
        return []
    V = inst.reduced(lam)
    top2 = np.sort(V, axis=1)[:, -2:]
    rows = np.nonzero(top2[:, 1] - top2[:, 0] <= tol)[0]
    out = []
    for i in rows:
        tied = np.nonzero(V[i] >= V[i].max() - tol)[0]
        out.append((int(i), tuple(int(j) + 1 for j in tied)))
    return out


def _next_breakpoint(inst: Instance, lam: float, cols: np.ndarray) -> float:
    """Smallest lam' > lam where some customer's argmax moves to a higher price."""
    r = np.arange(inst.N)
    Vc = (inst.v + lam * inst.b)[r, cols][:, None]
    bc = inst.b[r, cols][:, None]
    db = inst.b - bc
    gap = Vc - (inst.v + lam * inst.b)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(db > 0, gap / db, np.inf)
    step = step[np.isfinite(step) & (step > 0)]
    return lam + float(step.min()) if step.size else np.inf


def _right_cols(inst: Instance, lam: float, tol: float = TIE_TOL) -> np.ndarray:
    """Assignment just above lam: among near-maximal levels take the largest b."""
    V = inst.reduced(lam)
    near = V >= V.max(axis=1, keepdims=True) - tol
    return np.argmax(np.where(near, inst.b, -np.inf), axis=1)


def walk_to_feasible(inst: Instance, lam: float, max_steps: int = 100000):
    """Raise lam through breakpoints until the assignment meets the budget.

    At each breakpoint tied customers move to their budget-richest level.
    Returns (lam, cols); lam is unchanged when its assignment is feasible.
    """
    _, cols = dual_objective(inst, lam)
    if inst.slack(cols) >= 0:
        return lam, cols
    cols = _right_cols(inst, lam)
    steps = 0
    while inst.slack(cols) < 0 and steps < max_steps:
        nxt = _next_breakpoint(inst, lam, cols)
        if not np.isfinite(nxt):
            break
        lam = nxt
        cols = _right_cols(inst, lam)
        steps += 1
    return lam, cols


def kink_lambda(inst: Instance, sol: DualSolution) -> float:
    """The breakpoint inside the final bracket where the budget turns feasible.

    This is the exact dual minimiser when the bracket holds it; the fitted
    lam is the bracket midpoint, within eps/2 of it.
    """
    return walk_to_feasible(inst, sol.bracket[0])[0]


def round_primal(inst: Instance, lam: float, max_steps: int = 100000) -> PrimalSolution:
    """Integral budget-feasible assignment near the dual solution.

    Walks lam up to the first feasible breakpoint, then lets customers sitting
    on a tie take their best-value tied level whenever the budget still holds.
    """
    lam, cols = walk_to_feasible(inst, lam, max_steps)
    if inst.slack(cols) < 0:
        # every customer takes its highest-budget level; feasible when anything is
        cols = np.argmax(inst.b, axis=1)
    cols = cols.copy()
    repaired = 0
    slack = inst.slack(cols)
    for i, tied in fractionality_report(inst, lam):
        cand = [j - 1 for j in tied]
        best = max(cand, key=lambda j: (inst.v[i, j], -j))
        cur = cols[i]
        if best == cur:
            continue
        delta = inst.w[i] * (inst.b[i, best] - inst.b[i, cur])
        gain = inst.w[i] * (inst.v[i, best] - inst.v[i, cur])
        if gain > 0 and slack + delta >= 0:
            cols[i] = best
            slack += delta
            repaired += 1
    return PrimalSolution(cols, inst.objective(cols), inst.slack(cols), lam, repaired)


def solve(inst: Instance, eps: float | None = None):
    """Bounds, trisection and rounding in one call: (DualSolution, PrimalSolution)."""
    lo, hi = default_lambda_bounds(inst)
    eps = 1e-6 * hi if eps is None else eps
    ds = fit_lambda_trisection(inst, lo, hi, eps)
    # start from the bracket's low end so the walk stops on the kink itself
    return ds, round_primal(inst, ds.bracket[0])


def brute_force_oracle(inst: Instance, max_n: int = 10, max_j: int = 4,
                       chunk: int = 1 << 16) -> OracleSolution:
    """Exact optimum of the integral program by enumerating all J^N assignments."""
    N, J = inst.N, inst.J
    if N > max_n or J > max_j:
        raise SizeError(f"oracle limited to N<={max_n}, J<={max_j}")
    wv = inst.w[:, None] * inst.v
    wb = inst.w[:, None] * inst.b
    scale = 1e-12 * max(1.0, float(np.abs(wb).sum()))
    total = J ** N
    radix = J ** np.arange(N - 1, -1, -1, dtype=np.int64)
    best_val, best_code = -np.inf, -1
    rows = np.arange(N)
    for start in range(0, total, chunk):
        code = np.arange(start, min(total, start + chunk), dtype=np.int64)
        digits = (code[:, None] // radix[None, :]) % J
        val = wv[rows, digits].sum(axis=1)
        ok = wb[rows, digits].sum(axis=1) >= -scale
        if not ok.any():
            continue
        val = np.where(ok, val, -np.inf)
        k = int(np.argmax(val))
        if val[k] > best_val:
            best_val, best_code = float(val[k]), int(code[k])
    if best_code < 0:
        return OracleSolution(-np.inf, None, False)
    cols = (best_code // radix) % J
    return OracleSolution(best_val, cols.astype(np.int64), True)


def prop1_gap(inst_a: Instance, inst_b: Instance, eps_div: float = 1e-12) -> float:
    """Relative gap between multipliers fitted independently on two samples."""
    la = fit_lambda_trisection(inst_a).lam
    lb = fit_lambda_trisection(inst_b).lam
    return abs(la - lb) / max(la, lb, eps_div)


@dataclass
class GroupSolution:
    labels: np.ndarray
    group_cols: np.ndarray
    cols: np.ndarray
    lam: float
    objective: float
    slack: float
    cluster_seconds: float
    solve_seconds: float

    @property
    def levels(self) -> np.ndarray:
        return self.cols + 1


def offline_ip_group(inst: Instance, groups: int, seed: int = 0,
                     max_iter: int = 50, eps: float | None = None) -> GroupSolution:
    """Cluster customers on (q, v/p_0), solve the group program, broadcast levels.

    Group CVR and value are mass-weighted means, so the group budget equals the
    individual budget of the broadcast assignment exactly.
    """
    from sklearn.cluster import KMeans

    if groups < 1:
        raise ValueError("groups must be at least 1")
    if groups > inst.N:
        raise ValueError("more groups than customers")
    t0 = time.perf_counter()
    X = np.hstack([inst.q, inst.v / inst.ladder.base_price])
    km = KMeans(n_clusters=groups, n_init=1, max_iter=max_iter, random_state=seed)
    labels = km.fit_predict(X, sample_weight=inst.w)
    t1 = time.perf_counter()
    mass = np.bincount(labels, weights=inst.w, minlength=groups)
    keep = mass > 0
    remap = np.cumsum(keep) - 1
    labels = remap[labels]
    mass = mass[keep]
    G = len(mass)
    qg = np.vstack([np.bincount(labels, weights=inst.w * inst.q[:, j], minlength=G)
                    for j in range(inst.J)]).T / mass[:, None]
    vg = np.vstack([np.bincount(labels, weights=inst.w * inst.v[:, j], minlength=G)
                    for j in range(inst.J)]).T / mass[:, None]
    ginst = Instance(np.clip(qg, 0.0, 1.0), vg, inst.ladder, inst.p_b, mass,
                     check_monotone=inst.check_monotone)
    ds, ps = solve(ginst, eps)
    cols = ps.cols[labels]
    t2 = time.perf_counter()
    return GroupSolution(labels, ps.cols, cols, ds.lam, inst.objective(cols),
                         inst.slack(cols), t1 - t0, t2 - t1)


def read_instance_csv(path, ladder: PriceLadder, p_b: float,
                      check_monotone: bool = True):
    """(ids, Instance) from a `customer_id,q_1..q_J,v_1..v_J` file."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        head = next(rd)
        qc = [k for k, h in enumerate(head) if h.startswith("q_")]
        vc = [k for k, h in enumerate(head) if h.startswith("v_")]
        if head[0] != "customer_id" or len(qc) != len(vc) or not qc:
            raise ValueError("expected header customer_id,q_1..q_J,v_1..v_J")
        ids, q, v = [], [], []
        for r in rd:
            if r:
                ids.append(int(r[0]))
                q.append([float(r[k]) for k in qc])
                v.append([float(r[k]) for k in vc])
    return np.array(ids), Instance(np.array(q), np.array(v), ladder, p_b,
                                   check_monotone=check_monotone)


def write_instance_csv(path, ids, inst: Instance) -> None:
    J = inst.J
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["customer_id"] + [f"q_{j + 1}" for j in range(J)]
                    + [f"v_{j + 1}" for j in range(J)])
        for i, qr, vr in zip(ids, inst.q, inst.v):
            wr.writerow([int(i)] + [repr(float(x)) for x in qr] + [repr(float(x)) for x in vr])
