"""Profit maximization over price schedules pinned at the null good.

Brute force enumerates quantized schedules and is the oracle for up to
three free goods; the local search runs multi-start cyclic coordinate
descent with zoomed one-dimensional scans.  Both optimize price vectors:
on discrete instances every feasible utility profile is induced by some
schedule, so the price box is an equivalent and unconstrained search space.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import DiscreteProblem, PreconditionError, ToleranceSet
from .reduction import cluster_points
from .transform import PriceSchedule, UtilityProfile, compute_profit, cost_schedule, price_to_utility

__all__ = [
    "SolveResult",
    "default_bounds",
    "solve_bruteforce",
    "solve_localsearch",
    "profit_curve",
]

ENUMERATION_BUDGET = 10**8
MAX_NEAR_OPTIMA = 20000


@dataclass
class SolveResult:
    best_schedule: PriceSchedule
    best_profit: float
    best_utility: UtilityProfile
    all_optima: list[PriceSchedule]
    trace: list[float]
    seed: Optional[int]
    method: str
    iterations: int
    details: dict = field(default_factory=dict)


def default_bounds(d: DiscreteProblem) -> tuple[np.ndarray, np.ndarray]:
    """Price box [c_j, c_j + payoff spread]: anything higher is dominated
    by withdrawing the good."""
    spread = float(d.payoff.max() - d.payoff.min())
    lo = d.costs.copy()
    hi = d.costs + max(spread, 1e-12)
    return lo, hi


def _profit_scale(d: DiscreteProblem) -> float:
    spread = float(d.payoff.max() - d.payoff.min())
    mass = float(d.weights.sum())
    return max(1.0, spread * mass)


def _chunk_profits(d: DiscreteProblem, prices: np.ndarray, tol: float) -> np.ndarray:
    """Exact profits for a (K, C) matrix of full price columns."""
    surplus = d.payoff[:, :, None] - prices[None, :, :]
    u = surplus.max(axis=1)  # (N, C)
    in_set = surplus >= u[:, None, :] - tol
    margins = prices - d.costs[:, None]  # (K, C)
    alloc_margin = np.where(in_set, margins[None, :, :], -np.inf).max(axis=1)  # (N, C)
    return d.weights @ alloc_margin


def solve_bruteforce(
    d: DiscreteProblem,
    price_grid_step: float,
    bounds: Optional[tuple[np.ndarray, np.ndarray]] = None,
    opt_tol: Optional[float] = None,
    cluster_eps: Optional[float] = None,
    tolerances: Optional[ToleranceSet] = None,
    budget: int = ENUMERATION_BUDGET,
) -> SolveResult:
    """Exhaustive scan of quantized schedules; exact discrete optimum.

    Near-optima within ``opt_tol`` of the best are clustered in price
    space so distinct optimal plateaus are reported separately.
    """
    tols = tolerances or ToleranceSet()
    lo, hi = bounds if bounds is not None else default_bounds(d)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    free = [j for j in range(d.n_goods) if j != d.phi_index]
    if len(free) > 3:
        raise PreconditionError(f"brute force supports at most 3 free goods, got {len(free)}")
    axes = [lo[j] + price_grid_step * np.arange(int(np.floor((hi[j] - lo[j]) / price_grid_step)) + 1) for j in free]
    total = int(np.prod([len(a) for a in axes])) if free else 1
    if total > budget:
        raise PreconditionError(f"enumeration of {total} schedules exceeds the budget of {budget}")
    opt_tol = 1e-6 * _profit_scale(d) if opt_tol is None else float(opt_tol)
    cluster_eps = 10 * price_grid_step if cluster_eps is None else float(cluster_eps)

    base = d.costs.copy()  # non-free goods stay pinned at cost
    chunk = max(1, int(4_000_000 // max(d.n_types * d.n_goods, 1)))
    best_profit = -np.inf
    best_prices = None
    near: list[tuple[float, tuple[float, ...]]] = []
    trace = []
    sizes = [len(a) for a in axes]
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        prices = np.repeat(base[:, None], len(idx), axis=1)
        rem = idx
        for pos in range(len(free) - 1, -1, -1):
            rem, k = np.divmod(rem, sizes[pos])
            prices[free[pos]] = axes[pos][k]
        profits = _chunk_profits(d, prices, tols.convex_tol)
        top = int(np.argmax(profits))
        if profits[top] > best_profit:
            best_profit = float(profits[top])
            best_prices = prices[:, top].copy()
            near = [(p, v) for p, v in near if p >= best_profit - opt_tol]
        keep = np.flatnonzero(profits >= best_profit - opt_tol)
        near.extend((float(profits[k]), tuple(prices[:, k])) for k in keep)
        if len(near) > MAX_NEAR_OPTIMA:
            near.sort(key=lambda t: -t[0])
            near = near[:MAX_NEAR_OPTIMA]
        trace.append(best_profit)

    near = [(p, v) for p, v in near if p >= best_profit - opt_tol]
    all_optima = _cluster_optima(near, cluster_eps)
    best = PriceSchedule(best_prices)
    util = price_to_utility(d, best, tols)
    return SolveResult(
        best_schedule=best,
        best_profit=util.profit,
        best_utility=util,
        all_optima=all_optima,
        trace=trace,
        seed=None,
        method="brute",
        iterations=total,
        details={"opt_tol": opt_tol, "cluster_eps": cluster_eps, "near_optima": len(near)},
    )


def _cluster_optima(near: list[tuple[float, tuple[float, ...]]], eps: float) -> list[PriceSchedule]:
    """One representative schedule (the most profitable member, ties broken
    lexicographically) per price-space cluster, ordered by profit."""
    if not near:
        return []
    near = sorted(set(near), key=lambda t: (-t[0], t[1]))
    near = near[:4000]  # clustering is quadratic in the candidate count
    pts = np.array([v for _, v in near])
    _, members = cluster_points(pts, eps)
    reps = []
    for idx in members:
        ranked = sorted(idx, key=lambda k: (-near[k][0], near[k][1]))
        reps.append(near[ranked[0]])
    reps.sort(key=lambda t: (-t[0], t[1]))
    return [PriceSchedule(np.array(v)) for _, v in reps]


class _TopCache:
    """Running top-3 surplus per type over goods, for O(N) coordinate scans."""

    def __init__(self, surplus: np.ndarray):
        self.S = surplus  # (N, K), mutated in place by column updates
        self._rebuild_rows(np.arange(surplus.shape[0]))

    def _rebuild_rows(self, rows: np.ndarray):
        k = min(3, self.S.shape[1])
        order = np.argsort(self.S[rows], axis=1)[:, ::-1][:, :k]
        vals = np.take_along_axis(self.S[rows], order, axis=1)
        if not hasattr(self, "idx"):
            n = self.S.shape[0]
            self.idx = np.zeros((n, k), dtype=int)
            self.val = np.zeros((n, k))
        self.idx[rows] = order
        self.val[rows] = vals

    def rest(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Best surplus and its good over all goods except j."""
        first = self.idx[:, 0] == j
        rest_val = np.where(first, self.val[:, 1], self.val[:, 0])
        rest_idx = np.where(first, self.idx[:, 1], self.idx[:, 0])
        return rest_val, rest_idx

    def update_column(self, j: int, column: np.ndarray):
        self.S[:, j] = column
        holds_j = np.any(self.idx == j, axis=1)
        rows = np.flatnonzero(holds_j)
        if len(rows):
            self._rebuild_rows(rows)
        other = np.flatnonzero(~holds_j)
        if len(other):
            newv = column[other]
            val = self.val[other]
            idx = self.idx[other]
            insert1 = newv > val[:, 0]
            insert2 = ~insert1 & (newv > val[:, 1])
            insert3 = ~insert1 & ~insert2 & (newv > val[:, 2]) if val.shape[1] > 2 else np.zeros_like(insert1)
            if val.shape[1] > 2:
                val[insert2, 2] = val[insert2, 1]
                idx[insert2, 2] = idx[insert2, 1]
                val[insert3, 2] = newv[insert3]
                idx[insert3, 2] = j
            val[insert2, 1] = newv[insert2]
            idx[insert2, 1] = j
            if val.shape[1] > 2:
                val[insert1, 2] = val[insert1, 1]
                idx[insert1, 2] = idx[insert1, 1]
            val[insert1, 1] = val[insert1, 0]
            idx[insert1, 1] = idx[insert1, 0]
            val[insert1, 0] = newv[insert1]
            idx[insert1, 0] = j
            self.val[other] = val
            self.idx[other] = idx


def _scan_profits(
    d: DiscreteProblem,
    j: int,
    candidates: np.ndarray,
    rest_val: np.ndarray,
    rest_margin: np.ndarray,
    tol: float,
) -> np.ndarray:
    """Approximate profits of repricing good j (exact up to rest-side near-ties)."""
    uj = d.payoff[:, j][:, None] - candidates[None, :]  # (N, C)
    margin_j = (candidates - d.costs[j])[None, :]
    rest = rest_val[:, None]
    restm = rest_margin[:, None]
    diff = uj - rest
    alloc = np.where(diff > tol, margin_j, np.where(np.abs(diff) <= tol, np.maximum(margin_j, restm), restm))
    return d.weights @ alloc


def _descend(
    d: DiscreteProblem,
    v0: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    tols: ToleranceSet,
    opt_tol: float,
    coarse: int,
    zooms: int,
    zoom_points: int,
    max_cycles: int,
) -> tuple[np.ndarray, float, int]:
    """Cyclic coordinate descent from one start; returns (schedule, profit, cycles)."""
    v = v0.copy()
    free = [j for j in range(d.n_goods) if j != d.phi_index]
    cache = _TopCache(d.payoff - v[None, :])
    margins = v - d.costs
    current = compute_profit(d, PriceSchedule(v), tols)
    best_v, best_profit = v.copy(), current
    cycles = 0
    for _ in range(max_cycles):
        cycles += 1
        for j in free:
            rest_val, rest_idx = cache.rest(j)
            rest_margin = margins[rest_idx]
            span = hi[j] - lo[j]
            # scan a window around the incumbent so each start stays in its
            # own basin; the window re-centers every cycle
            window = span / 8
            center_lo = max(lo[j], v[j] - window)
            center_hi = min(hi[j], v[j] + window)
            best_p, best_val = v[j], -np.inf
            for stage in range(zooms + 1):
                count = coarse if stage == 0 else zoom_points
                cand = np.linspace(center_lo, center_hi, count)
                profits = _scan_profits(d, j, cand, rest_val, rest_margin, tols.convex_tol)
                k = int(np.argmax(profits))
                if profits[k] > best_val:
                    best_val = float(profits[k])
                    best_p = float(cand[k])
                width = (center_hi - center_lo) / max(count - 1, 1)
                center_lo = max(lo[j], best_p - width)
                center_hi = min(hi[j], best_p + width)
            if best_p != v[j]:
                v[j] = best_p
                margins[j] = v[j] - d.costs[j]
                cache.update_column(j, d.payoff[:, j] - v[j])
        new_profit = compute_profit(d, PriceSchedule(v), tols)
        if new_profit > best_profit:
            best_v, best_profit = v.copy(), new_profit
        if new_profit <= current + opt_tol:
            break
        current = new_profit
    return best_v, best_profit, cycles


def solve_localsearch(
    d: DiscreteProblem,
    starts: int = 8,
    seed: int = 0,
    bounds: Optional[tuple[np.ndarray, np.ndarray]] = None,
    opt_tol: Optional[float] = None,
    tolerances: Optional[ToleranceSet] = None,
    workers: Optional[int] = None,
    coarse: int = 64,
    zooms: int = 3,
    zoom_points: int = 24,
    max_cycles: int = 50,
    initial_schedules: Optional[list[PriceSchedule]] = None,
) -> SolveResult:
    """Multi-start cyclic coordinate descent over the price box.

    Starts run independently (optionally on a thread pool); the merge picks
    the maximal profit with lexicographic schedule tie-breaking, so results
    do not depend on scheduling order.  ``initial_schedules`` seeds the
    first starts with caller-chosen warm starts.
    """
    if d.n_goods < 2:
        raise PreconditionError("local search needs at least one non-null good")
    tols = tolerances or ToleranceSet()
    lo, hi = bounds if bounds is not None else default_bounds(d)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    opt_tol = 1e-6 * _profit_scale(d) if opt_tol is None else float(opt_tol)
    if workers is None:
        workers = int(os.environ.get("SCREENLAB_THREADS", "1") or 1)
    workers = max(1, workers)

    seeds = np.random.SeedSequence(seed).spawn(starts)
    warm = list(initial_schedules or [])

    def one_start(i: int):
        if i < len(warm):
            v0 = warm[i].values.copy()
            v0[d.phi_index] = d.costs[d.phi_index]
            v0 = np.where(np.isfinite(v0), v0, hi)
        else:
            rng = np.random.default_rng(seeds[i])
            v0 = lo + rng.random(d.n_goods) * (hi - lo)
            v0[d.phi_index] = d.costs[d.phi_index]
        return _descend(d, v0, lo, hi, tols, opt_tol, coarse, zooms, zoom_points, max_cycles)

    if workers == 1:
        outcomes = [one_start(i) for i in range(starts)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one_start, range(starts)))

    ranked = sorted(
        ((profit, tuple(v), cycles) for v, profit, cycles in outcomes),
        key=lambda t: (-t[0], t[1]),
    )
    best_profit, best_v, _ = ranked[0]
    near = [(p, v) for p, v, _ in ranked if p >= best_profit - opt_tol]
    span = float(np.max(hi - lo))
    all_optima = _cluster_optima(near, eps=max(1e-3 * span, 1e-12))
    best = PriceSchedule(np.array(best_v))
    util = price_to_utility(d, best, tols)
    return SolveResult(
        best_schedule=best,
        best_profit=util.profit,
        best_utility=util,
        all_optima=all_optima,
        trace=[p for p, _, _ in ranked],
        seed=seed,
        method="local",
        iterations=int(sum(c for _, _, c in outcomes)),
        details={"opt_tol": opt_tol, "starts": starts, "workers": workers},
    )


def profit_curve(
    d: DiscreteProblem,
    good_index: int,
    price_range: tuple[float, float],
    samples: int,
    base: Optional[PriceSchedule] = None,
    tolerances: Optional[ToleranceSet] = None,
) -> list[tuple[float, float]]:
    """One-dimensional profit sweep of a single good's price.

    All other prices stay at the base schedule (costs by default); the
    pinned good cannot be swept.
    """
    if good_index == d.phi_index:
        raise PreconditionError("the pinned good's price is fixed at cost and cannot be swept")
    tols = tolerances or ToleranceSet()
    base = base if base is not None else cost_schedule(d)
    base.validate(d)
    lo, hi = price_range
    out = []
    for price in np.linspace(lo, hi, samples):
        sched = base.with_price(good_index, float(price))
        out.append((float(price), compute_profit(d, sched, tols)))
    return out
