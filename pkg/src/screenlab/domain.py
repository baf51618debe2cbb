"""Sampled domains, tolerance knobs, and discrete problem assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .expr import Expression, evaluate

__all__ = [
    "Box",
    "Grid",
    "ToleranceSet",
    "ScreeningProblem",
    "DiscreteProblem",
    "build_grid",
    "grid_from_points",
    "assemble",
]

MAX_GRID_POINTS = 10**7


class PreconditionError(ValueError):
    """An operation was invoked on a problem that violates its preconditions."""


@dataclass(frozen=True)
class ToleranceSet:
    """Numerical knobs shared by every checker.

    fd_step is the stencil step for fourth-order checks, relative to the
    domain diameter.  cluster_tol is the image-clustering radius,
    convex_tol the convexity/membership slack, rank_tol the singular value
    threshold, and newton_tol / newton_max_iter control segment solves.
    """

    fd_step: float = 1e-2
    cluster_tol: float = 1e-6
    convex_tol: float = 1e-9
    rank_tol: float = 1e-6
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def __post_init__(self):
        for name in ("fd_step", "cluster_tol", "convex_tol", "rank_tol", "newton_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.newton_max_iter <= 0:
            raise ValueError("newton_max_iter must be strictly positive")
        if not self.cluster_tol > self.newton_tol:
            raise ValueError("cluster_tol must exceed newton_tol")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with a per-axis sampling resolution."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        resolution = tuple(int(r) for r in self.resolution)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "resolution", resolution)
        if not (len(lower) == len(upper) == len(resolution)):
            raise ValueError("lower, upper, resolution must share one length")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise ValueError("lower must be componentwise below upper")
        if any(r < 2 for r in resolution):
            raise ValueError("resolution must be at least 2 per axis")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.subtract(self.upper, self.lower)))


@dataclass(frozen=True)
class Grid:
    """Sampled domain: points with quadrature volumes.

    For box grids, ``shape`` carries the lattice layout (used for
    level-set connectivity) and ``box`` the originating Box.  Explicit
    point lists have unit volumes and no lattice structure.
    """

    points: np.ndarray  # (P, dim)
    volumes: np.ndarray  # (P,)
    box: Optional[Box] = None
    shape: Optional[tuple[int, ...]] = None

    @property
    def is_box(self) -> bool:
        return self.box is not None

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def diameter(self) -> float:
        if self.box is not None:
            return self.box.diameter
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(np.linalg.norm(hi - lo))


def build_grid(box: Box) -> Grid:
    """Regular lattice including both endpoints per axis.

    Volumes are trapezoid-style tensor products (half cells at the
    boundary) so that ``sum(f(points) * volumes)`` approximates the
    integral of f over the box.
    """
    total = int(np.prod(box.resolution))
    if total > MAX_GRID_POINTS:
        raise ValueError(f"grid of {total} points exceeds the {MAX_GRID_POINTS} budget")
    axes = [np.linspace(lo, hi, r) for lo, hi, r in zip(box.lower, box.upper, box.resolution)]
    axis_weights = []
    for lo, hi, r in zip(box.lower, box.upper, box.resolution):
        h = (hi - lo) / (r - 1)
        w = np.full(r, h)
        w[0] = w[-1] = h / 2
        axis_weights.append(w)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    volumes = np.ones(total)
    for axis, w in enumerate(axis_weights):
        wm = np.meshgrid(*[w if k == axis else np.ones(box.resolution[k]) for k in range(box.dim)], indexing="ij")
        volumes = volumes * wm[axis].ravel()
    return Grid(points=points, volumes=volumes, box=box, shape=box.resolution)


def grid_from_points(points: Sequence[Sequence[float]]) -> Grid:
    """Explicit finite point list; each point is an atom of unit volume."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise ValueError("point list must be nonempty")
    return Grid(points=pts, volumes=np.ones(len(pts)))


DomainSpec = Union[Box, Grid, Sequence[Sequence[float]]]


def _as_grid(domain: DomainSpec, dim: int, name: str) -> Grid:
    if isinstance(domain, Grid):
        grid = domain
    elif isinstance(domain, Box):
        grid = build_grid(domain)
    else:
        grid = grid_from_points(domain)
    if grid.dim != dim:
        raise ValueError(f"{name} has dimension {grid.dim}, expected {dim}")
    return grid


@dataclass
class ScreeningProblem:
    """Continuous-level statement: preference b, cost, type density, domains,
    and the good that must be offered at cost."""

    m: int
    n: int
    domain_x: DomainSpec
    domain_y: DomainSpec
    b: Expression
    cost: Expression
    density: Expression
    null_good: np.ndarray
    tolerances: ToleranceSet = field(default_factory=ToleranceSet)

    def __post_init__(self):
        self.null_good = np.asarray(self.null_good, dtype=float).reshape(-1)
        if len(self.null_good) != self.n:
            raise ValueError("null_good must have the goods dimension")

    @property
    def x_grid(self) -> Grid:
        if not isinstance(self.domain_x, Grid):
            self.domain_x = _as_grid(self.domain_x, self.m, "domain_x")
        return self.domain_x

    @property
    def y_grid(self) -> Grid:
        if not isinstance(self.domain_y, Grid):
            self.domain_y = _as_grid(self.domain_y, self.n, "domain_y")
        return self.domain_y


@dataclass(frozen=True)
class DiscreteProblem:
    """Sampled screening data: weighted types, costed goods, payoff matrix."""

    type_points: np.ndarray  # (N, m)
    weights: np.ndarray  # (N,)
    good_points: np.ndarray  # (K, n)
    costs: np.ndarray  # (K,)
    phi_index: int
    payoff: np.ndarray  # (N, K), payoff[i, j] = b(x_i, y_j)
    x_grid: Optional[Grid] = None
    y_grid: Optional[Grid] = None

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("type weights must be nonnegative")
        if not np.all(np.isfinite(self.payoff)):
            raise ValueError("payoff matrix must be finite")
        if not (0 <= self.phi_index < len(self.costs)):
            raise ValueError("phi_index out of range")

    @property
    def n_types(self) -> int:
        return len(self.weights)

    @property
    def n_goods(self) -> int:
        return len(self.costs)

    @property
    def m(self) -> int:
        return self.type_points.shape[1]

    @property
    def n(self) -> int:
        return self.good_points.shape[1]

    def participation_utility(self) -> np.ndarray:
        """Utility floor u_phi(x_i) = b(x_i, y_phi) - c_phi."""
        return self.payoff[:, self.phi_index] - self.costs[self.phi_index]


def _resolve_phi(grid: Grid, null_good: np.ndarray) -> int:
    if grid.is_box:
        return int(np.argmin(np.linalg.norm(grid.points - null_good, axis=1)))
    exact = np.where(np.all(grid.points == null_good, axis=1))[0]
    if len(exact) == 0:
        raise ValueError("null good must match a listed good exactly for point-list domains")
    return int(exact[0])


def assemble(problem: ScreeningProblem) -> DiscreteProblem:
    """Sample b, cost, and density on the grids and build the payoff matrix.

    Weights realize the type measure: density times cell volume.  Raises on
    negative density or any non-finite sample.
    """
    xg = problem.x_grid
    yg = problem.y_grid
    density = evaluate(problem.density, x=xg.points)
    density = np.broadcast_to(np.asarray(density, dtype=float), (len(xg.points),))
    if np.any(density < 0):
        where = int(np.argmin(density))
        raise ValueError(f"density is negative at type point {xg.points[where]}")
    weights = density * xg.volumes
    costs = evaluate(problem.cost, y=yg.points)
    costs = np.broadcast_to(np.asarray(costs, dtype=float), (len(yg.points),)).copy()
    payoff = evaluate(problem.b, x=xg.points[:, None, :], y=yg.points[None, :, :])
    payoff = np.broadcast_to(np.asarray(payoff, dtype=float), (len(xg.points), len(yg.points))).copy()
    phi = _resolve_phi(yg, problem.null_good)
    return DiscreteProblem(
        type_points=xg.points,
        weights=weights,
        good_points=yg.points,
        costs=costs,
        phi_index=phi,
        payoff=payoff,
        x_grid=xg,
        y_grid=yg,
    )
