import math

import numpy as np
import pytest

from screenlab.domain import Box, PreconditionError, ScreeningProblem, assemble
from screenlab.expr import parse
from screenlab.reduction import (
    build_tilde_price,
    check_effective_cost_convexity,
    cluster_points,
    lift_schedule,
    reduce_goods,
    reduce_types,
)
from screenlab.transform import (
    NOT_OFFERED,
    PriceSchedule,
    compute_profit,
    price_to_utility,
    random_schedule,
    utility_to_price,
)


def test_cluster_points_basic():
    pts = np.array([[0.0], [1e-8], [0.5], [0.5 + 1e-8], [1.0]])
    labels, members = cluster_points(pts, 1e-6)
    assert len(members) == 3
    assert labels.tolist() == [0, 0, 1, 1, 2]
    assert [m.tolist() for m in members] == [[0, 1], [2, 3], [4]]


def test_cluster_points_order_independent():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (40, 2))
    labels1, _ = cluster_points(pts, 0.05)
    perm = rng.permutation(40)
    labels2, _ = cluster_points(pts[perm], 0.05)
    # same partition up to relabeling
    for a in range(40):
        for b in range(40):
            same1 = labels1[perm[a]] == labels1[perm[b]]
            same2 = labels2[a] == labels2[b]
            assert same1 == same2


# ---------------------------------------------------------------------------
# Type reduction


def test_reduce_types_sum_instance(types_demo):
    problem, d = types_demo
    tr = reduce_types(d, problem)
    assert len(tr.effective_weights) == 81
    assert tr.well_definedness_gap <= 1e-12
    # quotient images are the coordinate sums
    sums = d.type_points.sum(axis=1)
    assert np.allclose(tr.effective_types[:, 0], np.unique(np.round(sums, 9)), atol=1e-9)
    # effective preference is z * y
    z = tr.effective_types[:, 0]
    y = d.good_points[:, 0]
    assert np.abs(tr.effective_problem.payoff - z[:, None] * y[None, :]).max() <= 1e-9


def test_reduce_types_pushforward_mass(types_demo):
    problem, d = types_demo
    tr = reduce_types(d, problem)
    full = math.fsum(d.weights.tolist())
    eff = math.fsum(tr.effective_weights.tolist())
    assert abs(full - eff) <= 1e-12 * full
    # uniform measure on the square pushes to a triangular profile in z
    nu = tr.effective_weights
    peak = int(np.argmax(nu))
    assert abs(tr.effective_types[peak, 0] - 1.0) <= 0.05
    assert nu[0] < nu[peak] and nu[-1] < nu[peak]


def test_reduce_types_requires_surplus_dimension(bilinear_1d):
    problem, d = bilinear_1d
    with pytest.raises(PreconditionError, match="type reduction"):
        reduce_types(d, problem)


def test_reduce_types_rejects_twisted_preference():
    p = ScreeningProblem(
        m=2, n=1,
        domain_x=Box((0.0, 0.0), (1.0, 1.0), (15, 15)),
        domain_y=Box((0.1,), (1.0,), (15,)),
        b=parse("x1*y1 + x2*y1^2", (2, 1)),
        cost=parse("y1^2", (2, 1)),
        density=parse("1", (2, 1)),
        null_good=[0.1],
    )
    d = assemble(p)
    with pytest.raises(PreconditionError, match="level sets depend"):
        reduce_types(d, p)


def test_profit_equivalence_over_schedules(types_demo):
    problem, d = types_demo
    tr = reduce_types(d, problem)
    rng = np.random.default_rng(42)
    for _ in range(50):
        v = random_schedule(d, rng)
        p_full = compute_profit(d, v)
        p_eff = compute_profit(tr.effective_problem, v)
        assert abs(p_full - p_eff) <= 1e-9 * (1.0 + abs(p_full))


def test_profit_equivalence_invariant_to_base_good(types_demo):
    problem, d = types_demo
    tr0 = reduce_types(d, problem, y0_index=d.phi_index)
    tr1 = reduce_types(d, problem, y0_index=d.n_goods // 2)
    rng = np.random.default_rng(9)
    for _ in range(10):
        v = random_schedule(d, rng)
        p = compute_profit(d, v)
        assert abs(compute_profit(tr0.effective_problem, v) - p) <= 1e-9 * (1 + abs(p))
        assert abs(compute_profit(tr1.effective_problem, v) - p) <= 1e-9 * (1 + abs(p))


def test_same_choice_within_clusters(types_demo):
    problem, d = types_demo
    tr = reduce_types(d, problem)
    rng = np.random.default_rng(8)
    clusters = [np.flatnonzero(tr.quotient_map == k) for k in range(len(tr.effective_weights))]
    for _ in range(10):
        profile = price_to_utility(d, random_schedule(d, rng))
        for cluster in clusters:
            if len(cluster) < 2:
                continue
            sets = [frozenset(profile.argmax_sets[i].tolist()) for i in cluster]
            assert len(set(sets)) == 1


# ---------------------------------------------------------------------------
# Goods reduction


def test_reduce_goods_fibers_and_cost(goods_demo):
    problem, d = goods_demo
    gr = reduce_goods(d, problem, x0_index=0)
    assert len(gr.effective_costs) == 81
    w = gr.effective_goods[:, 0]
    interior = w <= 1.5 + 1e-9  # the constrained argmin sits inside the box here
    oracle = 2.0 * w**2 / 3.0
    assert np.abs(gr.effective_costs - oracle)[interior].max() <= 2e-3


def test_reduce_goods_argmin_members(goods_demo):
    problem, d = goods_demo
    gr = reduce_goods(d, problem, x0_index=0)
    w = gr.effective_goods[:, 0]
    k = int(np.argmin(np.abs(w - 0.6)))
    members = d.good_points[gr.argmin_sets[k]]
    assert np.linalg.norm(members - np.array([0.4, 0.2]), axis=1).min() <= 0.03


def test_reduce_goods_requires_surplus_dimension(bilinear_1d):
    problem, d = bilinear_1d
    with pytest.raises(PreconditionError, match="goods reduction"):
        reduce_goods(d, problem)


def test_reduce_goods_strict_policy(goods_demo):
    problem, d = goods_demo
    gr = reduce_goods(d, problem, x0_index=0, phi_policy="strict")
    assert gr.representatives[gr.phi_fiber] == d.phi_index


def test_tilde_price_preserves_utilities(goods_demo):
    problem, d = goods_demo
    gr = reduce_goods(d, problem, x0_index=0)
    rng = np.random.default_rng(12)
    for _ in range(20):
        v = random_schedule(d, rng)
        tv = build_tilde_price(d, gr, v)
        assert not tv.offered.all()  # something was withdrawn
        pu = price_to_utility(d, v)
        ptv = price_to_utility(d, tv)
        assert np.abs(pu.u - ptv.u).max() <= 1e-9
        assert ptv.profit >= pu.profit - 1e-9


def test_tilde_price_fixed_point(goods_demo):
    problem, d = goods_demo
    gr = reduce_goods(d, problem, x0_index=0)
    rng = np.random.default_rng(13)
    base = random_schedule(d, rng)
    tv = build_tilde_price(d, gr, base)
    again = build_tilde_price(d, gr, tv)
    offered = tv.offered & again.offered
    assert np.allclose(tv.values[offered], again.values[offered], atol=1e-9)
    assert abs(compute_profit(d, tv) - compute_profit(d, again)) <= 1e-9


def test_lift_schedule_reproduces_effective_profit(goods_demo):
    problem, d = goods_demo
    gr = reduce_goods(d, problem, x0_index=0)
    rng = np.random.default_rng(21)
    for _ in range(10):
        ve = random_schedule(gr.effective_problem, rng)
        lifted = lift_schedule(d, gr, ve)
        p_eff = compute_profit(gr.effective_problem, ve)
        p_full = compute_profit(d, lifted)
        assert abs(p_eff - p_full) <= 1e-9 * (1 + abs(p_eff))


# ---------------------------------------------------------------------------
# Effective cost convexity


def test_effective_cost_convexity_compatible_instance():
    # the goods box is sized so the effective cost's slopes (at most
    # 4 * y_max even on constrained boundary fibers) stay within the type
    # range; the cost is then a transform and the gap is pure discretization
    p = ScreeningProblem(
        m=1, n=2,
        domain_x=Box((0.0,), (1.0,), (201,)),
        domain_y=Box((0.0, 0.0), (0.24, 0.24), (41, 41)),
        b=parse("x1*(y1+y2)", (1, 2)),
        cost=parse("y1^2 + 2*y2^2", (1, 2)),
        density=parse("1", (1, 2)),
        null_good=[0.0, 0.0],
    )
    d = assemble(p)
    gr = reduce_goods(d, p, x0_index=0)
    report = check_effective_cost_convexity(gr, tol=1e-3)
    assert report["passed"], report


def test_effective_cost_convexity_exact_for_transforms(goods_demo):
    problem, d = goods_demo
    gr = reduce_goods(d, problem, x0_index=0)
    eff = gr.effective_problem
    rng = np.random.default_rng(3)
    t = rng.uniform(0, 1, eff.n_types)
    transformed_cost = (eff.payoff - t[:, None]).max(axis=0)
    tweaked = type(eff)(
        type_points=eff.type_points, weights=eff.weights, good_points=eff.good_points,
        costs=transformed_cost, phi_index=eff.phi_index, payoff=eff.payoff,
    )
    gr2 = type(gr)(
        base_type=gr.base_type, fiber_map=gr.fiber_map, effective_goods=gr.effective_goods,
        effective_costs=transformed_cost, argmin_sets=gr.argmin_sets,
        representatives=gr.representatives, effective_problem=tweaked, phi_fiber=gr.phi_fiber,
    )
    report = check_effective_cost_convexity(gr2)
    assert report["passed"]
    assert report["max_gap"] <= 1e-11


def test_effective_cost_convexity_detects_dip(goods_demo):
    problem, d = goods_demo
    gr = reduce_goods(d, problem, x0_index=0)
    eff = gr.effective_problem
    t = (eff.payoff - eff.costs[None, :]).max(axis=1)
    envelope = (eff.payoff - t[:, None]).max(axis=0)
    dipped = envelope.copy()
    dipped[len(dipped) // 2] -= 0.25
    tweaked = type(eff)(
        type_points=eff.type_points, weights=eff.weights, good_points=eff.good_points,
        costs=dipped, phi_index=eff.phi_index, payoff=eff.payoff,
    )
    gr2 = type(gr)(
        base_type=gr.base_type, fiber_map=gr.fiber_map, effective_goods=gr.effective_goods,
        effective_costs=dipped, argmin_sets=gr.argmin_sets,
        representatives=gr.representatives, effective_problem=tweaked, phi_fiber=gr.phi_fiber,
    )
    report = check_effective_cost_convexity(gr2, tol=1e-6)
    assert not report["passed"]
    assert report["max_gap"] >= 0.2
