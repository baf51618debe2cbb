"""Equal-dimensional reductions of the screening problem.

When the type space has surplus dimensions (m > n), types sharing a
gradient level set always buy the same good and are merged into effective
types; when the goods space has surplus dimensions (n > m), each gradient
fiber is represented by its cheapest adjusted-cost member.  Both
constructions preserve profits schedule by schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conditions import Calculus, check_level_independence
from .domain import DiscreteProblem, PreconditionError, ScreeningProblem
from .transform import NOT_OFFERED, PriceSchedule, price_to_utility, utility_to_price

__all__ = [
    "UnionFind",
    "cluster_points",
    "TypeReduction",
    "GoodsReduction",
    "reduce_types",
    "reduce_goods",
    "build_tilde_price",
    "lift_schedule",
    "check_effective_cost_convexity",
]


class UnionFind:
    def __init__(self, size: int):
        self.parent = list(range(size))

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            # lowest index wins so representatives are deterministic
            if rj < ri:
                ri, rj = rj, ri
            self.parent[rj] = ri


def cluster_points(points: np.ndarray, eps: float) -> tuple[np.ndarray, list[np.ndarray]]:
    """Union-find over eps-balls; components of the eps-proximity graph.

    Returns per-point labels (0..k-1, ordered by lowest member index) and
    the member index arrays.  The result is independent of pair order.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    uf = UnionFind(n)
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    close = np.argwhere(np.triu(dist <= eps, k=1))
    for i, j in close:
        uf.union(int(i), int(j))
    roots = np.array([uf.find(i) for i in range(n)])
    order = np.unique(roots)
    labels = np.searchsorted(order, roots)
    members = [np.flatnonzero(labels == k) for k in range(len(order))]
    return labels, members


def _min_intercluster_distance(points: np.ndarray, labels: np.ndarray) -> float:
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    different = labels[:, None] != labels[None, :]
    if not different.any():
        return np.inf
    return float(dist[different].min())


@dataclass
class TypeReduction:
    """Quotient of the type space by gradient level sets."""

    base_good: int
    quotient_map: np.ndarray  # type index -> cluster id
    effective_types: np.ndarray  # (k, n) representative image points
    effective_weights: np.ndarray  # (k,) pushforward masses
    representatives: np.ndarray  # (k,) one original type index per cluster
    effective_problem: DiscreteProblem
    well_definedness_gap: float
    warnings: list[str] = field(default_factory=list)
    # populated when the reduced preference is available in closed form
    effective_screening: Optional[ScreeningProblem] = None


@dataclass
class GoodsReduction:
    """Quotient of the goods space by gradient fibers with adjusted costs."""

    base_type: int
    fiber_map: np.ndarray  # good index -> fiber id
    effective_goods: np.ndarray  # (k, m) representative image points
    effective_costs: np.ndarray  # (k,) minimal adjusted costs g
    argmin_sets: list[np.ndarray]  # M_w per fiber
    representatives: np.ndarray  # (k,) chosen good index per fiber
    effective_problem: DiscreteProblem
    phi_fiber: int
    warnings: list[str] = field(default_factory=list)
    effective_screening: Optional[ScreeningProblem] = None


def reduce_types(
    d: DiscreteProblem,
    problem: ScreeningProblem,
    y0_index: Optional[int] = None,
) -> TypeReduction:
    """Merge types with equal gradients at a base good into effective types.

    Requires m > n and level sets independent of the good; rejected with a
    gap witness when the pooled payoff differences are not constant within
    a cluster.
    """
    if problem.m <= problem.n:
        raise PreconditionError("type reduction requires more type than good dimensions")
    independence = check_level_independence(problem, d, "types")
    if independence.verdict != "pass":
        raise PreconditionError(f"level sets depend on the good: {independence.witnesses}")
    tols = problem.tolerances
    y0 = d.phi_index if y0_index is None else int(y0_index)

    calc = Calculus(problem)
    images = calc.grad_y(d.type_points, d.good_points[y0], (d.n_types,))  # (N, n)
    labels, members = cluster_points(images, tols.cluster_tol)

    warnings = []
    gap_between = _min_intercluster_distance(images, labels)
    if gap_between < 3 * tols.cluster_tol:
        warnings.append(
            f"clusters only {gap_between:.3e} apart at clustering radius {tols.cluster_tol:.3e}; "
            "grid resolution may be too coarse to separate effective types"
        )

    for idx in members:
        diam = 0.0
        if len(idx) > 1:
            pts = images[idx]
            diam = float(np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1).max())
        if diam > 2 * tols.cluster_tol:
            raise PreconditionError(f"cluster diameter {diam:.3e} exceeds twice the clustering radius")

    reps = np.array([int(idx[0]) for idx in members])
    nu = np.array([float(d.weights[idx].sum()) for idx in members])

    # pooled payoff differences must agree within each cluster
    shifted = d.payoff - d.payoff[:, [y0]]
    gap = 0.0
    gap_witness = None
    for k, idx in enumerate(members):
        if len(idx) < 2:
            continue
        block = shifted[idx]
        spread = block.max(axis=0) - block.min(axis=0)
        j = int(np.argmax(spread))
        if spread[j] > gap:
            gap = float(spread[j])
            gap_witness = {"cluster": k, "good": j, "gap": gap}
    if gap > tols.convex_tol:
        raise PreconditionError(
            f"cluster payoff differences vary by {gap:.3e} (witness {gap_witness}); "
            "the effective preference is not well defined at this tolerance"
        )

    effective = DiscreteProblem(
        type_points=images[reps],
        weights=nu,
        good_points=d.good_points,
        costs=d.costs,
        phi_index=d.phi_index,
        payoff=shifted[reps],
        x_grid=None,
        y_grid=d.y_grid,
    )
    return TypeReduction(
        base_good=y0,
        quotient_map=labels,
        effective_types=images[reps],
        effective_weights=nu,
        representatives=reps,
        effective_problem=effective,
        well_definedness_gap=gap,
        warnings=warnings,
    )


def default_base_type(d: DiscreteProblem) -> int:
    """Type closest to the centroid of the sampled type cloud."""
    centroid = d.type_points.mean(axis=0)
    return int(np.argmin(np.linalg.norm(d.type_points - centroid, axis=1)))


def reduce_goods(
    d: DiscreteProblem,
    problem: ScreeningProblem,
    x0_index: Optional[int] = None,
    phi_policy: str = "override",
) -> GoodsReduction:
    """Collapse gradient fibers of the goods space to their cheapest members.

    Each fiber's effective cost is the minimal production cost adjusted by
    the base type's payoff; the representative is the lowest-index member
    of the argmin set.  phi_policy controls the pinned good: "override"
    forces it to represent its fiber (keeping the at-cost pin meaningful),
    "strict" rejects the problem when it is not an argmin member.
    """
    if problem.n <= problem.m:
        raise PreconditionError("goods reduction requires more good than type dimensions")
    if phi_policy not in ("override", "strict"):
        raise ValueError("phi_policy must be 'override' or 'strict'")
    independence = check_level_independence(problem, d, "goods")
    if independence.verdict != "pass":
        raise PreconditionError(f"fibers depend on the type: {independence.witnesses}")
    tols = problem.tolerances
    x0 = default_base_type(d) if x0_index is None else int(x0_index)

    calc = Calculus(problem)
    images = calc.grad_x(d.type_points[x0], d.good_points, (d.n_goods,))  # (K, m)
    labels, members = cluster_points(images, tols.cluster_tol)

    warnings = []
    gap_between = _min_intercluster_distance(images, labels)
    if gap_between < 3 * tols.cluster_tol:
        warnings.append(
            f"fibers only {gap_between:.3e} apart at clustering radius {tols.cluster_tol:.3e}"
        )

    adjusted = d.costs - d.payoff[x0]
    g = np.array([float(adjusted[idx].min()) for idx in members])
    argmin_sets = [
        idx[adjusted[idx] <= g[k] + tols.convex_tol] for k, idx in enumerate(members)
    ]
    reps = np.array([int(s[0]) for s in argmin_sets])

    phi_fiber = int(labels[d.phi_index])
    if d.phi_index not in argmin_sets[phi_fiber]:
        if phi_policy == "strict":
            raise PreconditionError(
                "the pinned good does not minimize adjusted cost on its fiber"
            )
        warnings.append(
            "pinned good overrides its fiber representative; its adjusted cost "
            f"exceeds the fiber minimum by {adjusted[d.phi_index] - g[phi_fiber]:.3e}"
        )
    # the pin must survive reduction: phi represents its own fiber at its own cost
    reps[phi_fiber] = d.phi_index
    g_eff = g.copy()
    g_eff[phi_fiber] = float(adjusted[d.phi_index])

    effective = DiscreteProblem(
        type_points=d.type_points,
        weights=d.weights,
        good_points=images[reps],
        costs=g_eff,
        phi_index=phi_fiber,
        payoff=d.payoff[:, reps] - d.payoff[x0, reps][None, :],
        x_grid=d.x_grid,
        y_grid=None,
    )
    return GoodsReduction(
        base_type=x0,
        fiber_map=labels,
        effective_goods=images[reps],
        effective_costs=g,
        argmin_sets=argmin_sets,
        representatives=reps,
        effective_problem=effective,
        phi_fiber=phi_fiber,
        warnings=warnings,
    )


def build_tilde_price(d: DiscreteProblem, gr: GoodsReduction, v: PriceSchedule) -> PriceSchedule:
    """Restrict a schedule to argmin-fiber goods without changing utilities.

    The double transform prices every kept good; everything outside the
    argmin sets is withdrawn, and the pinned good stays at cost.
    """
    v.validate(d)
    profile = price_to_utility(d, v)
    double = utility_to_price(d, profile.u)
    keep = np.zeros(d.n_goods, dtype=bool)
    for s in gr.argmin_sets:
        keep[s] = True
    values = np.where(keep, double, NOT_OFFERED)
    values[d.phi_index] = d.costs[d.phi_index]
    return PriceSchedule(values)


def lift_schedule(d: DiscreteProblem, gr: GoodsReduction, effective: PriceSchedule) -> PriceSchedule:
    """Full-goods schedule equivalent to a schedule on the effective goods.

    Representatives carry the effective price plus the base type's payoff;
    all other goods are withdrawn.  Utilities and margins coincide with the
    effective problem's up to the argmin slack.
    """
    values = np.full(d.n_goods, NOT_OFFERED)
    for w, rep in enumerate(gr.representatives):
        if np.isfinite(effective.values[w]):
            values[rep] = effective.values[w] + d.payoff[gr.base_type, rep]
    values[d.phi_index] = d.costs[d.phi_index]
    return PriceSchedule(values)


def check_effective_cost_convexity(reduction, tol: Optional[float] = None) -> dict:
    """Double-transform fixed-point test of the effective cost.

    The effective cost is feasible (a transform of some type-side vector)
    iff transforming to types and back reproduces it.  Returns the verdict
    with the maximal gap; ``tol`` defaults to the convexity slack and
    should be widened to the discretization scale for sampled instances.
    """
    eff = reduction.effective_problem
    tol = 1e-9 if tol is None else float(tol)
    t = (eff.payoff - eff.costs[None, :]).max(axis=1)  # type-side transform of g
    g2 = (eff.payoff - t[:, None]).max(axis=0)  # and back to goods
    gaps = eff.costs - g2  # >= 0; zero iff g is already a transform
    worst = int(np.argmax(gaps))
    gap = float(gaps[worst])
    return {
        "passed": bool(gap <= tol),
        "max_gap": gap,
        "good_index": worst,
        "tolerance": tol,
    }
