"""Numerical verification of the structural conditions B0 through B3u.

All checks operate on sampled domains.  Verdicts are deterministic for a
fixed tolerance set and seed; every failure carries a witness that can be
re-evaluated standalone.  Fourth-order quantities use symbolic derivatives
of the preference expression, never nested finite differences of b itself;
only the final mixed derivative along segments is a stencil.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import DiscreteProblem, Grid, ScreeningProblem, ToleranceSet
from .expr import DomainError, Expression, differentiate, evaluate

__all__ = [
    "CheckResult",
    "LevelSet",
    "BSegment",
    "SegmentError",
    "Calculus",
    "check_b0",
    "check_b1",
    "check_b2_side",
    "check_b_linearity",
    "level_set",
    "check_level_independence",
    "solve_b_segment",
    "fourth_derivative_sample",
    "check_b3",
    "run_condition_suite",
]

PASS = "pass"
FAIL = "fail"
NOT_APPLICABLE = "not-applicable"
INCONCLUSIVE = "inconclusive"


@dataclass
class CheckResult:
    name: str
    verdict: str
    witnesses: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict,
            "witnesses": self.witnesses,
            "details": self.details,
        }


class SegmentError(RuntimeError):
    """Segment construction failed (divergence or leaving the domain)."""


@dataclass(frozen=True)
class LevelSet:
    """Grid points sharing a gradient value with a base point."""

    side: str  # "types" or "goods"
    base_type: int
    base_good: int
    members: np.ndarray


@dataclass(frozen=True)
class BSegment:
    """Curve whose gradient image is an affinely parametrized line segment."""

    side: str  # "x" or "y"
    anchor_x: np.ndarray
    anchor_y: np.ndarray
    direction: np.ndarray
    offsets: np.ndarray  # parameter values (scaled by the step)
    points: np.ndarray  # (len(offsets), dim) solved curve samples
    residuals: np.ndarray


# ---------------------------------------------------------------------------
# Symbolic derivative bundle


class Calculus:
    """Memoized symbolic partial derivatives of a preference expression."""

    def __init__(self, problem: ScreeningProblem):
        self.problem = problem
        self._cache: dict[tuple[str, ...], Expression] = {(): problem.b}

    def partial(self, *variables: str) -> Expression:
        key = tuple(sorted(variables))
        if key not in self._cache:
            parent = self.partial(*key[:-1])
            self._cache[key] = differentiate(parent, key[-1])
        return self._cache[key]

    def _field(self, names: list[str], X, Y, shape) -> np.ndarray:
        comps = []
        for name in names:
            val = evaluate(self.partial(name), x=X, y=Y)
            comps.append(np.broadcast_to(np.asarray(val, dtype=float), shape))
        return np.stack(comps, axis=-1)

    def grad_x(self, X, Y, shape) -> np.ndarray:
        """D_x b with result shape ``shape + (m,)``."""
        return self._field([f"x{i + 1}" for i in range(self.problem.m)], X, Y, shape)

    def grad_y(self, X, Y, shape) -> np.ndarray:
        """D_y b with result shape ``shape + (n,)``."""
        return self._field([f"y{j + 1}" for j in range(self.problem.n)], X, Y, shape)

    def cross_hessian(self, X, Y, shape) -> np.ndarray:
        """Mixed second derivatives, result shape ``shape + (m, n)``."""
        m, n = self.problem.m, self.problem.n
        out = np.empty(shape + (m, n))
        for i in range(m):
            for j in range(n):
                val = evaluate(self.partial(f"x{i + 1}", f"y{j + 1}"), x=X, y=Y)
                out[..., i, j] = np.broadcast_to(np.asarray(val, dtype=float), shape)
        return out


def _pair_shapes(d: DiscreteProblem):
    X = d.type_points[:, None, :]
    Y = d.good_points[None, :, :]
    return X, Y, (d.n_types, d.n_goods)


def _stride_sample(count: int, budget: int) -> np.ndarray:
    if count <= budget:
        return np.arange(count)
    step = count / budget
    return np.unique((np.arange(budget) * step).astype(int))


# ---------------------------------------------------------------------------
# B0: four continuous derivatives on the sampled closure


def check_b0(problem: ScreeningProblem, d: Optional[DiscreteProblem] = None) -> CheckResult:
    """Evaluate every mixed partial of b up to total order 4 on the grid.

    Passes iff all values are finite; a blow-up is reported with the
    derivative multi-index and the offending point pair.
    """
    from .domain import assemble

    if d is None:
        d = assemble(problem)
    calc = Calculus(problem)
    X, Y, shape = _pair_shapes(d)
    names = [f"x{i + 1}" for i in range(problem.m)] + [f"y{j + 1}" for j in range(problem.n)]
    for order in range(0, 5):
        for combo in itertools.combinations_with_replacement(names, order):
            try:
                expr = calc.partial(*combo)
            except DomainError:  # pragma: no cover - differentiation is total
                raise
            values = evaluate(expr, x=X, y=Y, validate=False)
            values = np.broadcast_to(np.asarray(values, dtype=float), shape)
            finite = np.isfinite(values)
            if not finite.all():
                i, j = np.argwhere(~finite)[0]
                witness = {
                    "derivative": list(combo),
                    "type_point": d.type_points[i].tolist(),
                    "good_point": d.good_points[j].tolist(),
                    "value": float(values[i, j]),
                }
                return CheckResult("b0", FAIL, [witness], {"order": order})
    return CheckResult("b0", PASS, [], {"pairs": int(np.prod(shape))})


# ---------------------------------------------------------------------------
# B1: full-rank cross derivative, injective gradient maps, connected level sets


def _lattice_connected(members: np.ndarray, grid: Grid) -> bool:
    """Connectivity of a member set under lattice (Chebyshev-1) adjacency."""
    if len(members) <= 1:
        return True
    if grid.shape is None:
        return False  # point lists carry no adjacency; only singletons pass
    coords = np.stack(np.unravel_index(members, grid.shape), axis=1)
    member_set = {tuple(c) for c in coords}
    start = tuple(coords[0])
    seen = {start}
    queue = deque([start])
    offsets = [o for o in itertools.product((-1, 0, 1), repeat=grid.dim) if any(o)]
    while queue:
        cur = queue.popleft()
        for off in offsets:
            nxt = tuple(c + o for c, o in zip(cur, off))
            if nxt in member_set and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return len(seen) == len(member_set)


def level_set(
    d: DiscreteProblem,
    problem: ScreeningProblem,
    i: int,
    j: int,
    side: str = "types",
    calc: Optional[Calculus] = None,
) -> LevelSet:
    """Grid points whose gradient matches the base pair's within cluster_tol.

    side="types": types sharing D_y b(., y_j) with x_i.
    side="goods": goods sharing D_x b(x_i, .) with y_j.
    """
    calc = calc or Calculus(problem)
    tol = problem.tolerances.cluster_tol
    if side == "types":
        grads = calc.grad_y(d.type_points, d.good_points[j], (d.n_types,))
        base = grads[i]
    elif side == "goods":
        grads = calc.grad_x(d.type_points[i], d.good_points, (d.n_goods,))
        base = grads[j]
    else:
        raise ValueError("side must be 'types' or 'goods'")
    members = np.flatnonzero(np.linalg.norm(grads - base, axis=-1) <= tol)
    return LevelSet(side=side, base_type=i, base_good=j, members=members)


def check_b1(
    problem: ScreeningProblem,
    d: DiscreteProblem,
    base_budget: int = 16,
) -> CheckResult:
    """Rank of the cross derivative at every grid pair, injectivity of the
    lower-dimensional gradient map, and connectivity of level-set clusters."""
    calc = Calculus(problem)
    tols = problem.tolerances
    m, n = problem.m, problem.n
    witnesses = []

    X, Y, shape = _pair_shapes(d)
    H = calc.cross_hessian(X, Y, shape)
    sing = np.linalg.svd(H, compute_uv=False)
    smallest = sing[..., min(m, n) - 1]
    if np.any(smallest <= tols.rank_tol):
        i, j = np.unravel_index(int(np.argmin(smallest)), shape)
        witnesses.append(
            {
                "kind": "rank",
                "type_point": d.type_points[i].tolist(),
                "good_point": d.good_points[j].tolist(),
                "smallest_singular_value": float(smallest[i, j]),
            }
        )

    # injectivity proxy on the lower-dimensional side
    ctol = tols.cluster_tol
    type_bases = _stride_sample(d.n_types, base_budget)
    good_bases = _stride_sample(d.n_goods, base_budget)
    if m >= n and d.n_goods > 1:
        ydist = np.linalg.norm(d.good_points[:, None, :] - d.good_points[None, :, :], axis=-1)
        for i in type_bases:
            img = calc.grad_x(d.type_points[int(i)], d.good_points, (d.n_goods,))
            idist = np.linalg.norm(img[:, None, :] - img[None, :, :], axis=-1)
            bad = np.argwhere((idist <= ctol) & (ydist > ctol))
            if len(bad):
                j, k = bad[0]
                witnesses.append(
                    {
                        "kind": "injectivity",
                        "side": "goods",
                        "type_point": d.type_points[int(i)].tolist(),
                        "colliding_goods": [d.good_points[j].tolist(), d.good_points[k].tolist()],
                        "image_value": img[j].tolist(),
                    }
                )
                break
    if n >= m and d.n_types > 1:
        xdist = np.linalg.norm(d.type_points[:, None, :] - d.type_points[None, :, :], axis=-1)
        for j in good_bases:
            img = calc.grad_y(d.type_points, d.good_points[int(j)], (d.n_types,))
            idist = np.linalg.norm(img[:, None, :] - img[None, :, :], axis=-1)
            bad = np.argwhere((idist <= ctol) & (xdist > ctol))
            if len(bad):
                i, k = bad[0]
                witnesses.append(
                    {
                        "kind": "injectivity",
                        "side": "types",
                        "good_point": d.good_points[int(j)].tolist(),
                        "colliding_types": [d.type_points[i].tolist(), d.type_points[k].tolist()],
                        "image_value": img[i].tolist(),
                    }
                )
                break

    # connectivity of level-set clusters on the grid graph
    inconclusive = False
    disconnects = 0
    for i in type_bases[: min(len(type_bases), 8)]:
        for j in good_bases[: min(len(good_bases), 8)]:
            for side, grid in (("types", d.x_grid), ("goods", d.y_grid)):
                if grid is None:
                    continue
                ls = level_set(d, problem, int(i), int(j), side=side, calc=calc)
                if len(ls.members) > 1 and grid.shape is None:
                    inconclusive = True
                    continue
                if not _lattice_connected(ls.members, grid):
                    disconnects += 1
                    if disconnects <= 4:
                        witnesses.append(
                            {
                                "kind": "disconnected-level-set",
                                "side": side,
                                "base_type": int(i),
                                "base_good": int(j),
                                "members": int(len(ls.members)),
                            }
                        )

    if witnesses:
        return CheckResult("b1", FAIL, witnesses, {"grid": list(shape)})
    if inconclusive:
        return CheckResult(
            "b1", INCONCLUSIVE, [], {"reason": "non-singleton level sets on a point-list domain"}
        )
    return CheckResult("b1", PASS, [], {"grid": list(shape)})


# ---------------------------------------------------------------------------
# b-linearity and B2 (convex gradient images)


def _image_rank(points: np.ndarray, rank_tol: float) -> tuple[int, np.ndarray, np.ndarray]:
    """Rank of the centered point cloud with its principal directions."""
    centered = points - points.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return 0, s, vt
    rank = int(np.sum(s > rank_tol * s[0]))
    return rank, s, vt


def check_b_linearity(
    problem: ScreeningProblem,
    d: DiscreteProblem,
    x0_index: int = 0,
    calc: Optional[Calculus] = None,
) -> CheckResult:
    """Does the goods image D_x b(x0, Y) sit inside a shifted n-dimensional
    subspace?  Only meaningful when m exceeds n."""
    if problem.m <= problem.n:
        return CheckResult("b_linearity", NOT_APPLICABLE, [], {"reason": "m <= n"})
    calc = calc or Calculus(problem)
    img = calc.grad_x(d.type_points[x0_index], d.good_points, (d.n_goods,))
    rank, s, _ = _image_rank(img, problem.tolerances.rank_tol)
    details = {
        "base_type": int(x0_index),
        "rank": rank,
        "singular_values": s.tolist(),
    }
    if rank <= problem.n:
        return CheckResult("b_linearity", PASS, [], details)
    witness = {"base_type": int(x0_index), "rank": rank, "allowed": problem.n}
    return CheckResult("b_linearity", FAIL, [witness], details)


def _membership_slack(img: np.ndarray, source_grid: Optional[Grid], convex_tol: float) -> float:
    """Midpoint-membership slack: exact for finite point lists, resolution
    aware for sampled boxes (nearest-neighbor covering radius of the image)."""
    diam = float(np.linalg.norm(img.max(axis=0) - img.min(axis=0)))
    slack = convex_tol * max(diam, 1.0)
    if source_grid is not None and source_grid.is_box and len(img) > 1:
        dist = np.linalg.norm(img[:, None, :] - img[None, :, :], axis=-1)
        np.fill_diagonal(dist, np.inf)
        spacing = float(dist.min(axis=1).max())
        slack = max(slack, spacing)
    return slack


def check_b2_side(
    problem: ScreeningProblem,
    d: DiscreteProblem,
    side: str,
    seed: int = 0,
    pairs: int = 256,
    base_budget: int = 12,
) -> CheckResult:
    """Convexity of the gradient image from sampled base points.

    side="goods" tests D_x b(x0, Y) for sampled x0 (b-convexity of the
    goods space); side="types" tests D_y b(X, y0).  When the image lives in
    a higher-dimensional ambient space, the cloud must first be flat
    (rank at most the source dimension) and midpoints are tested inside
    its principal subspace.
    """
    calc = Calculus(problem)
    tols = problem.tolerances
    rng = np.random.default_rng(seed)
    name = f"b2_{side}"
    witnesses = []

    if side == "goods":
        ambient, source_dim = problem.m, problem.n
        bases = _stride_sample(d.n_types, base_budget)
        source_grid = d.y_grid
    elif side == "types":
        ambient, source_dim = problem.n, problem.m
        bases = _stride_sample(d.n_goods, base_budget)
        source_grid = d.x_grid
    else:
        raise ValueError("side must be 'goods' or 'types'")

    for base in bases:
        if side == "goods":
            img = calc.grad_x(d.type_points[int(base)], d.good_points, (d.n_goods,))
            base_point = d.type_points[int(base)]
        else:
            img = calc.grad_y(d.type_points, d.good_points[int(base)], (d.n_types,))
            base_point = d.good_points[int(base)]
        if len(img) < 2:
            continue

        cloud = img
        if ambient > source_dim:
            rank, s, vt = _image_rank(img, tols.rank_tol)
            if rank > source_dim:
                witnesses.append(
                    {
                        "kind": "not-b-linear",
                        "base_point": base_point.tolist(),
                        "rank": rank,
                        "allowed": source_dim,
                    }
                )
                continue
            center = img.mean(axis=0)
            cloud = (img - center) @ vt[:max(rank, 1)].T

        slack = _membership_slack(cloud, source_grid, tols.convex_tol)
        total_pairs = len(cloud) * (len(cloud) - 1) // 2
        if total_pairs <= pairs:
            ii, jj = np.triu_indices(len(cloud), k=1)
        else:
            ii = rng.integers(0, len(cloud), size=pairs)
            jj = rng.integers(0, len(cloud), size=pairs)
        mids = 0.5 * (cloud[ii] + cloud[jj])
        dist = np.linalg.norm(mids[:, None, :] - cloud[None, :, :], axis=-1).min(axis=1)
        worst = int(np.argmax(dist))
        if dist[worst] > slack:
            witnesses.append(
                {
                    "kind": "midpoint-gap",
                    "base_point": base_point.tolist(),
                    "pair": [int(ii[worst]), int(jj[worst])],
                    "midpoint": mids[worst].tolist(),
                    "distance": float(dist[worst]),
                    "slack": float(slack),
                }
            )

    if witnesses:
        return CheckResult(name, FAIL, witnesses, {"bases": len(bases), "pairs": pairs, "seed": seed})
    return CheckResult(name, PASS, [], {"bases": len(bases), "pairs": pairs, "seed": seed})


def check_level_independence(
    problem: ScreeningProblem,
    d: DiscreteProblem,
    side: str,
    base_budget: int = 64,
) -> CheckResult:
    """Are the level-set clusters the same against every good (resp. type)?

    Equivalent to b-linearity when the clusters are connected; both are
    reported so the equivalence itself is testable.
    """
    calc = Calculus(problem)
    tol = problem.tolerances.cluster_tol
    if side == "types":
        if problem.m <= problem.n:
            return CheckResult("level_independence", NOT_APPLICABLE, [], {"reason": "m <= n"})
        grads = calc.grad_y(
            d.type_points[:, None, :], d.good_points[None, :, :], (d.n_types, d.n_goods)
        )  # (N, K, n)
        bases = _stride_sample(d.n_types, base_budget)
        witnesses = []
        for i in bases:
            member = np.linalg.norm(grads - grads[int(i)][None, :, :], axis=-1) <= tol  # (N, K)
            same = np.all(member == member[:, [0]])
            if not same:
                diff_goods = np.flatnonzero(np.any(member != member[:, [0]], axis=0))
                witnesses.append(
                    {
                        "base_type": int(i),
                        "goods": [0, int(diff_goods[0])],
                        "member_counts": [int(member[:, 0].sum()), int(member[:, diff_goods[0]].sum())],
                    }
                )
                break
        if witnesses:
            return CheckResult("level_independence", FAIL, witnesses, {"side": side})
        return CheckResult("level_independence", PASS, [], {"side": side, "bases": len(bases)})

    if side == "goods":
        if problem.n <= problem.m:
            return CheckResult("level_independence", NOT_APPLICABLE, [], {"reason": "n <= m"})
        grads = calc.grad_x(
            d.type_points[:, None, :], d.good_points[None, :, :], (d.n_types, d.n_goods)
        )  # (N, K, m)
        bases = _stride_sample(d.n_goods, base_budget)
        witnesses = []
        for j in bases:
            member = np.linalg.norm(grads - grads[:, [int(j)], :], axis=-1) <= tol  # (N, K)
            same = np.all(member == member[[0], :])
            if not same:
                diff_types = np.flatnonzero(np.any(member != member[[0], :], axis=1))
                witnesses.append(
                    {
                        "base_good": int(j),
                        "types": [0, int(diff_types[0])],
                        "member_counts": [int(member[0].sum()), int(member[diff_types[0]].sum())],
                    }
                )
                break
        if witnesses:
            return CheckResult("level_independence", FAIL, witnesses, {"side": side})
        return CheckResult("level_independence", PASS, [], {"side": side, "bases": len(bases)})

    raise ValueError("side must be 'types' or 'goods'")


# ---------------------------------------------------------------------------
# b-segments and the fourth-derivative condition


def _in_box(point: np.ndarray, grid: Grid, margin_rel: float = 1e-9) -> bool:
    box = grid.box
    if box is None:
        return False
    span = np.maximum(np.subtract(box.upper, box.lower), 1e-300)
    lo = np.asarray(box.lower) - margin_rel * span
    hi = np.asarray(box.upper) + margin_rel * span
    return bool(np.all(point >= lo) and np.all(point <= hi))


def solve_b_segment(
    problem: ScreeningProblem,
    anchor: tuple[np.ndarray, np.ndarray],
    direction: np.ndarray,
    side: str,
    delta: float,
    calc: Optional[Calculus] = None,
    offsets=(-2, -1, 0, 1, 2),
) -> BSegment:
    """Trace the curve whose gradient image moves affinely from the anchor.

    side="y": solve D_x b(x0, y(t)) = D_x b(x0, y0) + t * direction by
    Newton iteration on the symbolic cross derivative, warm-starting each
    stencil offset from its neighbor.  side="x" is the mirror image.
    Requires m == n so the relevant Jacobian is square.
    """
    if problem.m != problem.n:
        raise SegmentError("b-segments require equal dimensions")
    calc = calc or Calculus(problem)
    tols = problem.tolerances
    x0 = np.asarray(anchor[0], dtype=float)
    y0 = np.asarray(anchor[1], dtype=float)
    direction = np.asarray(direction, dtype=float)
    grid = problem.y_grid if side == "y" else problem.x_grid
    if not grid.is_box:
        raise SegmentError("segment tracing requires a box domain")

    def gradient(point):
        if side == "y":
            return calc.grad_x(x0, point, ())
        return calc.grad_y(point, y0, ())

    def jacobian(point):
        if side == "y":
            return calc.cross_hessian(x0, point, ())  # d(D_x b)/dy
        return calc.cross_hessian(point, y0, ()).T  # d(D_y b)/dx

    base = gradient(y0 if side == "y" else x0)
    ref = 1.0 + float(np.linalg.norm(base))
    target_tol = max(1e-14 * ref, 8 * np.finfo(float).eps * ref)

    order = [i for i, t in sorted(enumerate(offsets), key=lambda p: (abs(p[1]), p[1]))]
    start_point = y0 if side == "y" else x0
    points = np.empty((len(offsets), len(start_point)))
    residuals = np.empty(len(offsets))
    solved: dict[int, np.ndarray] = {}
    for idx in order:
        t = offsets[idx] * delta
        target = base + t * direction
        # warm start from the nearest already-solved offset
        warm = start_point
        if solved:
            nearest = min(solved, key=lambda k: abs(offsets[k] - offsets[idx]))
            warm = solved[nearest]
        point = warm.copy()
        best_point, best_res = point, np.inf
        stagnant = 0
        for _ in range(tols.newton_max_iter):
            res_vec = gradient(point) - target
            res = float(np.linalg.norm(res_vec))
            if res < best_res:
                best_point, best_res = point.copy(), res
                stagnant = 0
            else:
                stagnant += 1
                if stagnant >= 3:
                    break
            if res <= target_tol:
                break
            J = np.atleast_2d(jacobian(point))
            try:
                step = np.linalg.solve(J, np.atleast_1d(res_vec))
            except np.linalg.LinAlgError as exc:
                raise SegmentError(f"singular Jacobian along the segment: {exc}") from exc
            point = point - step
            if not _in_box(point, grid, margin_rel=1e-6):
                raise SegmentError(
                    "iterate left the domain; the target may fall outside the gradient image"
                )
        if best_res > tols.newton_tol:
            raise SegmentError(f"no convergence (residual {best_res:.3e})")
        if not _in_box(best_point, grid):
            raise SegmentError("solution left the domain closure")
        solved[idx] = best_point
        points[idx] = best_point
        residuals[idx] = best_res
    return BSegment(
        side=side,
        anchor_x=x0,
        anchor_y=y0,
        direction=direction,
        offsets=np.asarray(offsets, dtype=float) * delta,
        points=points,
        residuals=residuals,
    )


_STENCIL = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def fourth_derivative_sample(
    problem: ScreeningProblem,
    anchor_x: np.ndarray,
    anchor_y: np.ndarray,
    pdot: np.ndarray,
    qdot: np.ndarray,
    delta_s: float,
    delta_t: float,
    calc: Optional[Calculus] = None,
) -> dict:
    """Mixed fourth derivative of b along the two b-segments at one anchor.

    Returns the stencil value, the transversality factors, and the
    numerical noise floor of the tensored second-difference stencil.
    """
    calc = calc or Calculus(problem)
    xseg = solve_b_segment(problem, (anchor_x, anchor_y), pdot, "x", delta_s, calc)
    yseg = solve_b_segment(problem, (anchor_x, anchor_y), qdot, "y", delta_t, calc)
    values = evaluate(problem.b, x=xseg.points[:, None, :], y=yseg.points[None, :, :])
    values = np.broadcast_to(np.asarray(values, dtype=float), (5, 5))
    # each sampled value carries rounding at the scale of b itself, which
    # the differencing amplifies; the floor must use that scale
    raw_magnitude = float(np.abs(values).max())
    # the stencil weights annihilate constants exactly, so centering on the
    # anchor value costs nothing and trims catastrophic cancellation
    values = values - values[2, 2]
    ws = _STENCIL / delta_s**2
    wt = _STENCIL / delta_t**2
    value = float(ws @ values @ wt)

    H = calc.cross_hessian(anchor_x, anchor_y, ())
    xdot = np.linalg.solve(H.T, pdot)
    ydot = np.linalg.solve(H, qdot)
    f1 = float(np.linalg.norm(xdot @ H))
    f2 = float(np.linalg.norm(H @ ydot))
    amplification = float(np.abs(ws).sum() * np.abs(wt).sum())
    floor = 4.0 * np.finfo(float).eps * max(raw_magnitude, 1e-300) * amplification
    return {
        "value": value,
        "f1": f1,
        "f2": f2,
        "noise_floor": floor,
        "x_segment": xseg,
        "y_segment": yseg,
    }


def _unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            return v / norm


def check_b3(
    problem: ScreeningProblem,
    d: Optional[DiscreteProblem] = None,
    strict: bool = False,
    samples: int = 64,
    seed: int = 0,
    strict_margin: float = 1e-8,
) -> CheckResult:
    """Monte Carlo check of the fourth-derivative sign along b-segments.

    Random interior anchors and unit image directions; the verdict must
    survive halving the stencil step, else it is inconclusive.  With
    strict=True, transversal samples must clear a positive margin; strict
    verdicts are numerical evidence only.
    """
    name = "b3u" if strict else "b3"
    if problem.m != problem.n:
        return CheckResult(name, NOT_APPLICABLE, [], {"reason": "dimensions differ; reduce first"})
    xg, yg = problem.x_grid, problem.y_grid
    if not (xg.is_box and yg.is_box):
        return CheckResult(name, NOT_APPLICABLE, [], {"reason": "segments need box domains"})

    calc = Calculus(problem)
    tols = problem.tolerances
    rng = np.random.default_rng(seed)
    delta_s = tols.fd_step * xg.diameter
    delta_t = tols.fd_step * yg.diameter
    xlo, xhi = np.asarray(xg.box.lower), np.asarray(xg.box.upper)
    ylo, yhi = np.asarray(yg.box.lower), np.asarray(yg.box.upper)

    records = []
    excluded = 0
    for _ in range(samples):
        ax = xlo + (0.1 + 0.8 * rng.random(problem.m)) * (xhi - xlo)
        ay = ylo + (0.1 + 0.8 * rng.random(problem.n)) * (yhi - ylo)
        pdot = _unit_vector(rng, problem.n)
        qdot = _unit_vector(rng, problem.m)
        try:
            full = fourth_derivative_sample(problem, ax, ay, pdot, qdot, delta_s, delta_t, calc)
            half = fourth_derivative_sample(
                problem, ax, ay, pdot, qdot, delta_s / 2, delta_t / 2, calc
            )
        except SegmentError as exc:
            excluded += 1
            records.append({"anchor_x": ax.tolist(), "anchor_y": ay.tolist(), "excluded": str(exc)})
            continue
        records.append(
            {
                "anchor_x": ax.tolist(),
                "anchor_y": ay.tolist(),
                "pdot": pdot.tolist(),
                "qdot": qdot.tolist(),
                "value": full["value"],
                "value_half_step": half["value"],
                "f1": full["f1"],
                "f2": full["f2"],
                "noise_floor": full["noise_floor"],
                "noise_floor_half": half["noise_floor"],
            }
        )

    usable = [r for r in records if "value" in r]
    details = {
        "seed": seed,
        "samples": samples,
        "excluded": excluded,
        "delta_s": delta_s,
        "delta_t": delta_t,
        "strict_margin": strict_margin if strict else None,
        "evidence": "numerical evidence" if strict else None,
        "records": records,
    }
    if not usable:
        return CheckResult(name, INCONCLUSIVE, [], details)

    def verdict_at(step: str) -> tuple[str, list]:
        value_key = "value" if step == "full" else "value_half_step"
        floor_key = "noise_floor" if step == "full" else "noise_floor_half"
        bad = []
        for r in usable:
            scale = r["f1"] * r["f2"]
            threshold = -(tols.convex_tol * scale + r[floor_key])
            if r[value_key] < threshold:
                bad.append({**{k: r[k] for k in ("anchor_x", "anchor_y", "pdot", "qdot")},
                            "value": r[value_key], "threshold": threshold})
            elif strict and r["f1"] > tols.rank_tol and r["f2"] > tols.rank_tol:
                strict_threshold = strict_margin * scale + r[floor_key]
                if r[value_key] < strict_threshold:
                    bad.append({**{k: r[k] for k in ("anchor_x", "anchor_y", "pdot", "qdot")},
                                "value": r[value_key], "threshold": strict_threshold,
                                "kind": "not-strict"})
        return (FAIL if bad else PASS), bad

    verdict_full, bad_full = verdict_at("full")
    verdict_half, _ = verdict_at("half")
    if verdict_full != verdict_half:
        return CheckResult(name, INCONCLUSIVE, bad_full, details)
    return CheckResult(name, verdict_full, bad_full, details)


# ---------------------------------------------------------------------------
# Orchestration


def run_condition_suite(
    problem: ScreeningProblem,
    d: DiscreteProblem,
    seed: int = 0,
    b3_samples: int = 64,
) -> dict[str, CheckResult]:
    """Run B0 through B3u with the dependency order of the conditions."""
    results: dict[str, CheckResult] = {}
    results["b0"] = check_b0(problem, d)
    if not results["b0"].passed:
        for name in ("b1", "b2_goods", "b2_types", "b_linearity", "level_independence", "b3", "b3u"):
            results[name] = CheckResult(name, NOT_APPLICABLE, [], {"reason": "b0 failed"})
        return results
    results["b1"] = check_b1(problem, d)
    results["b2_goods"] = check_b2_side(problem, d, "goods", seed=seed)
    results["b2_types"] = check_b2_side(problem, d, "types", seed=seed)
    if problem.m > problem.n:
        results["b_linearity"] = check_b_linearity(problem, d)
        results["level_independence"] = check_level_independence(problem, d, "types")
    elif problem.n > problem.m:
        results["b_linearity"] = CheckResult("b_linearity", NOT_APPLICABLE, [], {"reason": "m <= n"})
        results["level_independence"] = check_level_independence(problem, d, "goods")
    else:
        results["b_linearity"] = CheckResult("b_linearity", NOT_APPLICABLE, [], {"reason": "m == n"})
        results["level_independence"] = CheckResult(
            "level_independence", NOT_APPLICABLE, [], {"reason": "m == n"}
        )
    if problem.m == problem.n and results["b1"].passed:
        results["b3"] = check_b3(problem, d, strict=False, samples=b3_samples, seed=seed)
        results["b3u"] = check_b3(problem, d, strict=True, samples=b3_samples, seed=seed)
    else:
        reason = "m != n: check the reduced problem" if problem.m != problem.n else "b1 failed"
        results["b3"] = CheckResult("b3", NOT_APPLICABLE, [], {"reason": reason})
        results["b3u"] = CheckResult("b3u", NOT_APPLICABLE, [], {"reason": reason})
    return results
