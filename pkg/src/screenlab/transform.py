"""Generalized Legendre (b-)transforms between price schedules and utilities.

Prices use ``NOT_OFFERED`` (IEEE infinity) as the withdrawn-good sentinel:
``payoff - inf = -inf`` drops the good from every maximum exactly, matching
the withdrawn-good semantics of restricted schedules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import DiscreteProblem, ToleranceSet

__all__ = [
    "NOT_OFFERED",
    "PriceSchedule",
    "UtilityProfile",
    "price_to_utility",
    "utility_to_price",
    "is_b_convex",
    "tie_break",
    "compute_profit",
    "cost_schedule",
    "random_schedule",
]

NOT_OFFERED = math.inf


@dataclass(frozen=True)
class PriceSchedule:
    """Price per good; ``NOT_OFFERED`` entries are withdrawn goods.

    Invariant: the pinned good phi is offered at exactly its cost, so at
    least one good is always offered.
    """

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).copy())
        self.values.setflags(write=False)

    @property
    def offered(self) -> np.ndarray:
        return np.isfinite(self.values)

    def validate(self, d: DiscreteProblem) -> None:
        if len(self.values) != d.n_goods:
            raise ValueError("schedule length must match the goods list")
        pin = self.values[d.phi_index]
        target = d.costs[d.phi_index]
        if not math.isclose(pin, target, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(f"price of the pinned good is {pin}, must equal its cost {target}")
        if not self.offered.any():
            raise ValueError("at least one good must be offered")

    def with_price(self, index: int, price: float) -> "PriceSchedule":
        values = self.values.copy()
        values[index] = price
        return PriceSchedule(values)


@dataclass(frozen=True)
class UtilityProfile:
    """Buyer-side view of a schedule: utilities, argmax sets, allocation, profit."""

    u: np.ndarray  # (N,)
    argmax_sets: tuple[np.ndarray, ...]
    allocation: np.ndarray  # (N,) good indices
    profit: float


def cost_schedule(d: DiscreteProblem) -> PriceSchedule:
    """Every good offered at cost (the zero-margin schedule)."""
    return PriceSchedule(d.costs)


def tie_break(d: DiscreteProblem, argmax_set: np.ndarray, v: PriceSchedule) -> int:
    """Pick the margin-maximizing good from an argmax set, lowest index on ties."""
    cand = np.sort(np.asarray(argmax_set, dtype=int))
    if cand.size == 0:
        raise ValueError("argmax set must be nonempty")
    margins = v.values[cand] - d.costs[cand]
    return int(cand[np.argmax(margins)])


def _allocate(d: DiscreteProblem, surplus: np.ndarray, u: np.ndarray, v: PriceSchedule, tol: float):
    """Vectorized argmax sets and margin-maximizing allocation."""
    in_set = surplus >= u[:, None] - tol  # (N, K); -inf columns never qualify
    margins = v.values - d.costs
    cand_margin = np.where(in_set, margins[None, :], -np.inf)
    allocation = np.argmax(cand_margin, axis=1)  # first max = lowest index
    sets = tuple(np.flatnonzero(row) for row in in_set)
    return sets, allocation


def price_to_utility(
    d: DiscreteProblem, v: PriceSchedule, tolerances: ToleranceSet | None = None
) -> UtilityProfile:
    """Indirect utilities u_i = max over offered goods of payoff - price.

    The argmax set keeps every good within ``convex_tol`` of the maximum so
    tie-breaking is stable against floating error; profit follows the
    allocation.
    """
    tol = (tolerances or ToleranceSet()).convex_tol
    v.validate(d)
    with np.errstate(invalid="ignore"):
        surplus = d.payoff - v.values[None, :]
    u = surplus.max(axis=1)
    sets, allocation = _allocate(d, surplus, u, v, tol)
    rows = np.arange(d.n_types)
    profit = float(
        np.sum(d.weights * (d.payoff[rows, allocation] - u - d.costs[allocation]))
    )
    return UtilityProfile(u=u, argmax_sets=sets, allocation=allocation, profit=profit)


def utility_to_price(d: DiscreteProblem, u: np.ndarray) -> np.ndarray:
    """Transform back to goods space: w_j = max_i payoff[i, j] - u_i."""
    u = np.asarray(u, dtype=float)
    return (d.payoff - u[:, None]).max(axis=0)


def is_b_convex(
    d: DiscreteProblem, u: np.ndarray, tolerances: ToleranceSet | None = None
) -> tuple[bool, dict | None]:
    """Double-transform fixed-point test, ignoring the null-good pin.

    A utility vector is feasible (expressible as some schedule's indirect
    utility) iff the double transform reproduces it; the witness carries
    the worst type index and its gap.
    """
    tol = (tolerances or ToleranceSet()).convex_tol
    u = np.asarray(u, dtype=float)
    w = utility_to_price(d, u)
    u2 = (d.payoff - w[None, :]).max(axis=1)
    gaps = np.abs(u2 - u)
    worst = int(np.argmax(gaps))
    gap = float(gaps[worst])
    if gap <= tol:
        return True, None
    return False, {"type_index": worst, "gap": gap, "double_transform": float(u2[worst])}


def compute_profit(
    d: DiscreteProblem, v: PriceSchedule, tolerances: ToleranceSet | None = None
) -> float:
    """Seller profit of a schedule under margin-maximizing tie-breaking."""
    return price_to_utility(d, v, tolerances).profit


def random_schedule(
    d: DiscreteProblem, rng: np.random.Generator, range_factor: float = 1.0
) -> PriceSchedule:
    """Prices uniform in [c_j, c_j + range_factor * payoff spread], pinned at phi."""
    spread = float(d.payoff.max() - d.payoff.min())
    values = d.costs + rng.uniform(0.0, max(spread * range_factor, 1e-12), size=d.n_goods)
    values[d.phi_index] = d.costs[d.phi_index]
    return PriceSchedule(values)
