import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from couponldm.core import PriceLadder
from couponldm.dual import (DegenerateBudgetError, _crude_lambda_high, Instance, SizeError, brute_force_oracle,
                            default_lambda_bounds, dual_objective, fit_lambda_trisection,
                            fractionality_report, kink_lambda, offline_ip_group, prop1_gap,
                            read_instance_csv, revenue_instance, round_primal, solve,
                            write_instance_csv)

from oracles import dual_min_by_breakpoints, dual_on_grid

LAD2 = PriceLadder(16, (0, 8))  # prices 16, 8


def rand_inst(rng, n, J=5, p_b=None, revenue=False):
    lad = PriceLadder(16, tuple(2.0 * np.arange(J)))
    q = np.sort(rng.random((n, J)), axis=1)
    if p_b is None:
        p_b = rng.uniform(lad.prices.min() + 0.5, 15.5)
    if revenue:
        return revenue_instance(q, lad, p_b)
    return Instance(q, rng.random((n, J)) * 3, lad, p_b)


def test_instance_validation():
    with pytest.raises(ValueError):
        Instance([[0.5, 0.2]], [[1, 1]], LAD2, 12)
    inst = Instance([[0.5, 0.2]], [[1, 1]], LAD2, 12, check_monotone=False)
    assert inst.N == 1
    with pytest.raises(ValueError):
        Instance([[0.1, 0.2]], [[1, 1]], LAD2, 17)


def test_dual_objective_lambda_zero():
    rng = np.random.default_rng(0)
    inst = rand_inst(rng, 20)
    val, cols = dual_objective(inst, 0.0)
    assert val == pytest.approx(inst.v.max(axis=1).sum())
    assert np.array_equal(cols, np.argmax(inst.v, axis=1))


def test_dual_objective_single_level():
    lad = PriceLadder(10, (0,))
    inst = Instance([[0.4]], [[2.0]], lad, 10)
    for lam in (0.0, 1.0, 7.5):
        assert dual_objective(inst, lam)[0] == pytest.approx(2.0 - lam * 0.4 * (10 - 10))


def test_dual_objective_matches_assignment_enumeration():
    q = np.array([[0.2, 0.6], [0.1, 0.3]])
    v = np.array([[3.0, 4.5], [1.0, 2.2]])
    inst = Instance(q, v, LAD2, 12.0)
    for lam in (0.0, 0.3, 1.0, 2.5):
        best = max(
            sum(v[i, a[i]] - lam * q[i, a[i]] * (12.0 - LAD2.prices[a[i]]) for i in range(2))
            for a in itertools.product(range(2), repeat=2))
        assert dual_objective(inst, lam)[0] == pytest.approx(best, abs=1e-12)


def test_slack_budget_gives_zero_lambda():
    # every customer's best value sits at a price >= p_b
    q = np.array([[0.3, 0.35], [0.2, 0.5]])
    v = np.array([[5.0, 1.0], [4.0, 0.5]])
    inst = Instance(q, v, LAD2, 12.0)
    ds = fit_lambda_trisection(inst, 0.0, 10.0, 1e-6)
    assert 0.0 <= ds.lam < 1e-6
    assert ds.cols.tolist() == [0, 0]


def test_trisection_vs_dense_grid():
    # grid spacing eps/10; the grid minimum of a convex piecewise-linear D
    # sits at one of the two grid points around its exact minimiser
    rng = np.random.default_rng(1)
    for _ in range(10):
        inst = rand_inst(rng, 10)
        lo, hi = default_lambda_bounds(inst)
        eps = 1e-9 * hi
        ds = fit_lambda_trisection(inst, lo, hi, eps)
        h = eps / 10
        kink = kink_lambda(inst, ds)
        g = np.array([np.floor(kink / h) * h, np.ceil(kink / h) * h])
        D = dual_on_grid(inst.v, inst.b, np.clip(g, lo, hi), lo, hi)
        assert ds.objective <= D.min() + 1e-6
        assert ds.objective >= dual_min_by_breakpoints(inst.v, inst.b, lo, hi) - 1e-9


def test_envelope_oracle_matches_direct_evaluation():
    rng = np.random.default_rng(12)
    inst = rand_inst(rng, 40)
    lo, hi = default_lambda_bounds(inst)
    grid = np.linspace(lo, hi, 500)
    direct = np.array([dual_objective(inst, x)[0] for x in grid])
    assert np.allclose(dual_on_grid(inst.v, inst.b, grid, lo, hi), direct, rtol=0, atol=1e-9)


def test_weak_duality_against_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(30):
        inst = rand_inst(rng, int(rng.integers(1, 7)), J=3)
        opt = brute_force_oracle(inst)
        assert opt.feasible
        for lam in np.linspace(0, 5, 11):
            assert dual_objective(inst, lam)[0] >= opt.objective - 1e-9
        ds, ps = solve(inst)
        assert ds.objective >= opt.objective - 1e-9
        assert ps.feasible and ps.objective <= opt.objective + 1e-9


def test_bounds_hand_example():
    inst = Instance([[0.2, 0.5]], [[3.2, 4.0]], LAD2, 12.0)
    # crude bound (4.0 - 3.2) / (0.5 * (12 - 8)) + 1 = 1.4, halved while the
    # kink at 0.8 / 2.8 stays below: 1.4 -> 0.7 -> 0.35
    assert _crude_lambda_high(inst) == pytest.approx(1.4)
    assert default_lambda_bounds(inst) == (0.0, pytest.approx(0.35))
    scaled = Instance([[0.2, 0.5]], [[6.4, 8.0]], LAD2, 12.0)
    assert _crude_lambda_high(scaled) - 1 == pytest.approx(2 * 0.4)
    with pytest.raises(DegenerateBudgetError):
        default_lambda_bounds(Instance([[0.2, 0.5]], [[3.2, 4.0]], LAD2, 8.0))


def test_crude_bound_excludes_below_budget_levels():
    rng = np.random.default_rng(3)
    inst = rand_inst(rng, 200)
    _, cols = dual_objective(inst, _crude_lambda_high(inst))
    assert np.all(inst.ladder.prices[cols] >= inst.p_b)


def test_bounds_bracket_the_kink_within_factor_two():
    rng = np.random.default_rng(31)
    for _ in range(30):
        inst = rand_inst(rng, 100)
        lo, hi = default_lambda_bounds(inst)
        ds = fit_lambda_trisection(inst, lo, hi)
        kink = kink_lambda(inst, ds)
        assert kink <= hi
        if kink > 0:
            assert 0.5 * hi < kink + 1e-9


def test_slack_budget_returns_zero():
    inst = Instance([[0.2, 0.5]], [[5.0, 1.0]], LAD2, 12.0)  # argmax is the full price
    ds = fit_lambda_trisection(inst)
    assert ds.lam == 0.0 and ds.bracket == (0.0, 0.0)


def test_oracle_small_cases():
    inst = Instance([[0.5, 0.6]], [[1.0, 2.0]], LAD2, 14.0)
    sol = brute_force_oracle(inst)
    assert sol.feasible and sol.levels.tolist() == [1]
    one = PriceLadder(12, (0,))
    inst = Instance([[0.3], [0.7]], [[1.0], [2.0]], one, 12.0)
    sol = brute_force_oracle(inst)
    assert sol.objective == pytest.approx(3.0)
    with pytest.raises(SizeError):
        brute_force_oracle(rand_inst(np.random.default_rng(0), 11, J=2))


def test_engineered_tie_reported():
    # V1 = 1 + lam, V2 = 4 - 2 lam: tie at lam = 1
    inst = Instance([[0.25, 0.5]], [[1.0, 4.0]], LAD2, 12.0)
    assert fractionality_report(inst, 1.0, tol=1e-9) == [(0, (1, 2))]
    assert fractionality_report(inst, 0.5, tol=1e-9) == []


def test_at_most_one_tie_on_continuous_instances():
    rng = np.random.default_rng(4)
    for _ in range(100):
        inst = rand_inst(rng, 50)
        ds = fit_lambda_trisection(inst)
        assert len(ds.fractional_ties) <= 1
        ties = fractionality_report(inst, kink_lambda(inst, ds))
        assert len(ties) <= 1
        if ds.lam > ds.bracket[1] - ds.bracket[0]:
            # a binding budget puts exactly one customer on the kink
            assert len(ties) == 1


def test_price_direction_around_fitted_lambda():
    rng = np.random.default_rng(5)
    done = 0
    for _ in range(20):
        inst = rand_inst(rng, 300, p_b=13.0, revenue=True)
        ds = fit_lambda_trisection(inst)
        if ds.lam < 1e-3:
            continue
        done += 1
        assert inst.slack(dual_objective(inst, 0.9 * ds.lam)[1]) < 0
        assert inst.slack(dual_objective(inst, 1.1 * ds.lam)[1]) >= 0
    assert done >= 10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_dual_convex(seed):
    rng = np.random.default_rng(seed)
    inst = rand_inst(rng, 20)
    for _ in range(20):
        l1, l2, l3 = np.sort(rng.random(3) * 10)
        if l3 - l1 < 1e-9:
            continue
        t = (l2 - l1) / (l3 - l1)
        interp = (1 - t) * dual_objective(inst, l1)[0] + t * dual_objective(inst, l3)[0]
        assert dual_objective(inst, l2)[0] <= interp + 1e-9


def test_rounding_feasible_and_close():
    rng = np.random.default_rng(6)
    for _ in range(20):
        inst = rand_inst(rng, 400)
        ds, ps = solve(inst)
        assert ps.feasible
        assert ps.objective <= ds.objective + 1e-9
        assert ds.objective - ps.objective <= inst.v.max() + 1e-9


def test_prop1_gap_trivial_cases():
    rng = np.random.default_rng(7)
    inst = rand_inst(rng, 500, p_b=13.0, revenue=True)
    assert prop1_gap(inst, inst) == 0.0
    dup = revenue_instance(np.vstack([inst.q, inst.q]), inst.ladder, inst.p_b)
    assert prop1_gap(inst, dup) <= 1e-9


def test_group_singletons_match_individual():
    rng = np.random.default_rng(8)
    inst = rand_inst(rng, 30, p_b=13.0, revenue=True)
    gs = offline_ip_group(inst, 30, seed=0)
    _, ps = solve(inst)
    assert np.array_equal(gs.cols, ps.cols)


def test_single_group_picks_best_feasible_level():
    rng = np.random.default_rng(9)
    inst = rand_inst(rng, 40, p_b=13.0, revenue=True)
    gs = offline_ip_group(inst, 1, seed=0)
    assert len(set(gs.cols.tolist())) == 1
    best = max((inst.v[:, j].sum(), -j) for j in range(inst.J)
               if inst.b[:, j].sum() >= 0)
    assert gs.cols[0] == -best[1]
    with pytest.raises(ValueError):
        offline_ip_group(inst, 41)


def test_group_never_beats_individual():
    rng = np.random.default_rng(10)
    for _ in range(5):
        inst = rand_inst(rng, 2000, p_b=13.0, revenue=True)
        gs = offline_ip_group(inst, 20, seed=1)
        _, ps = solve(inst)
        assert gs.slack >= -1e-9
        assert ps.objective >= gs.objective


def test_instance_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    inst = rand_inst(rng, 5, p_b=12.0)
    write_instance_csv(tmp_path / "i.csv", range(5), inst)
    ids, back = read_instance_csv(tmp_path / "i.csv", inst.ladder, 12.0)
    assert ids.tolist() == list(range(5))
    assert np.array_equal(back.q, inst.q) and np.array_equal(back.v, inst.v)
