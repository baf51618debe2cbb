"""Structural results of the reduction machinery as falsifiable checks.

Each check runs on a concrete instance with a recorded seed and returns a
TheoremCheck whose evidence suffices to recompute the verdict.  Check ids
("prop-3-1", "thm-4-4", ...) are the stable wire names used by the CLI and
report schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conditions import check_b1, check_b2_side, run_condition_suite
from .domain import DiscreteProblem, PreconditionError, ScreeningProblem, assemble
from .reduction import GoodsReduction, TypeReduction, build_tilde_price, lift_schedule
from .transform import (
    PriceSchedule,
    is_b_convex,
    price_to_utility,
    random_schedule,
)

__all__ = [
    "TheoremCheck",
    "verify_prop31",
    "verify_lemma43",
    "verify_thm44",
    "verify_prop51",
    "verify_cor52",
    "verify_transfer",
]

PASS = "pass"
FAIL = "fail"
NOT_APPLICABLE = "not-applicable"


@dataclass
class TheoremCheck:
    check_id: str
    instance: str
    verdict: str
    evidence: dict = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        return {
            "id": self.check_id,
            "instance": self.instance,
            "verdict": self.verdict,
            "evidence": self.evidence,
            "seed": self.seed,
        }


def _supported_utility(d: DiscreteProblem, j: int, price: float) -> np.ndarray:
    """Utility of the schedule offering only good j (at ``price``) and the
    pinned good at cost; feasible by construction."""
    floor = d.participation_utility()
    return np.maximum(floor, d.payoff[:, j] - price)


def verify_prop31(
    d: DiscreteProblem,
    problem: Optional[ScreeningProblem] = None,
    offset_frac: float = 0.2,
    witness_type: Optional[int] = None,
    pair: Optional[tuple[int, int]] = None,
    seed: int = 0,
) -> TheoremCheck:
    """Exhibit non-convexity of the feasible utility class.

    Builds two single-good supported utilities crossing at a witness type
    and asserts their midpoint fails the double-transform test.  Applicable
    when the goods image is not convex; with a problem attached, the
    gradient-image check gates applicability.
    """
    if problem is not None:
        b2 = check_b2_side(problem, d, "goods", seed=seed)
        if b2.verdict == "pass":
            return TheoremCheck(
                "prop-3-1",
                "goods image is convex at this resolution",
                NOT_APPLICABLE,
                {"b2_goods": "pass"},
                seed,
            )

    phi = d.phi_index
    candidates_j = [j for j in range(d.n_goods) if j != phi]
    if pair is not None:
        pairs = [pair]
    else:
        pairs = [(phi, j) for j in candidates_j] + [
            (j, k) for j in candidates_j for k in candidates_j if j < k
        ]
    types = (
        [witness_type]
        if witness_type is not None
        else [d.n_types // 2] + list(np.linspace(1, d.n_types - 2, 7).astype(int))
    )

    floor = d.participation_utility()

    def branch(active: int, other: int, i: int, gamma: float) -> np.ndarray:
        """Single-good supported utility whose active good at type i is
        ``active``, winning over ``other`` there by gamma."""
        if active == phi:
            # offer the other good, priced to lose at type i
            return _supported_utility(d, other, d.payoff[i, other] - floor[i] + gamma)
        return _supported_utility(d, active, d.payoff[i, active] - floor[i] - gamma)

    best = None
    for j, k in pairs[:16]:
        for i in types:
            span = abs(d.payoff[i, j] - d.payoff[i, k])
            gamma = offset_frac * span
            if gamma <= 0:
                continue
            # two feasible utilities crossing at type i with distinct active
            # goods; their average has an unreachable slope there
            u0 = branch(j, k, i, gamma)
            u1 = branch(k, j, i, gamma)
            mid = 0.5 * (u0 + u1)
            flag, wit = is_b_convex(d, mid)
            if not flag and (best is None or wit["gap"] > best["gap"]):
                best = {
                    "gap": wit["gap"],
                    "witness_type_index": wit["type_index"],
                    "witness_type": d.type_points[wit["type_index"]].tolist(),
                    "pair": [int(j), int(k)],
                    "crossing_type_index": int(i),
                    "offset": gamma,
                }
    if best is None:
        return TheoremCheck(
            "prop-3-1",
            "no midpoint violation found",
            FAIL,
            {"pairs_tried": len(pairs[:16]), "types_tried": len(types)},
            seed,
        )
    return TheoremCheck("prop-3-1", "midpoint of two feasible utilities is infeasible", PASS, best, seed)


def verify_lemma43(
    d: DiscreteProblem,
    tr: TypeReduction,
    schedules: int = 20,
    seed: int = 0,
) -> TheoremCheck:
    """Types merged into one effective type share argmax sets under every
    schedule."""
    rng = np.random.default_rng(seed)
    clusters = [np.flatnonzero(tr.quotient_map == k) for k in range(len(tr.effective_weights))]
    multi = [c for c in clusters if len(c) > 1]
    if not multi:
        return TheoremCheck(
            "lemma-4-3", "all clusters are singletons", PASS, {"clusters": len(clusters)}, seed
        )
    for s in range(schedules):
        v = random_schedule(d, rng)
        profile = price_to_utility(d, v)
        for c in multi:
            ref = set(profile.argmax_sets[c[0]].tolist())
            for i in c[1:]:
                got = set(profile.argmax_sets[i].tolist())
                if got != ref:
                    return TheoremCheck(
                        "lemma-4-3",
                        "cluster members disagree on argmax sets",
                        FAIL,
                        {
                            "schedule_index": s,
                            "cluster_members": [int(c[0]), int(i)],
                            "sets": [sorted(ref), sorted(got)],
                        },
                        seed,
                    )
    return TheoremCheck(
        "lemma-4-3",
        "argmax sets identical within clusters",
        PASS,
        {"schedules": schedules, "multi_clusters": len(multi)},
        seed,
    )


def verify_thm44(
    d: DiscreteProblem,
    tr: TypeReduction,
    schedules: int = 50,
    seed: int = 0,
    gap_bound: float = 1e-9,
) -> TheoremCheck:
    """Profit equality between the full and the effective problem, schedule
    by schedule, plus exact mass conservation."""
    if tr.well_definedness_gap > 1e-10:
        return TheoremCheck(
            "thm-4-4",
            "effective preference not well defined tightly enough",
            NOT_APPLICABLE,
            {"well_definedness_gap": tr.well_definedness_gap},
            seed,
        )
    mass_full = math.fsum(d.weights.tolist())
    mass_eff = math.fsum(tr.effective_weights.tolist())
    mass_ok = abs(mass_full - mass_eff) <= 1e-12 * max(mass_full, 1.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(schedules):
        v = random_schedule(d, rng)
        p_full = price_to_utility(d, v).profit
        p_eff = price_to_utility(tr.effective_problem, v).profit
        worst = max(worst, abs(p_full - p_eff) / (1.0 + abs(p_full)))
    evidence = {
        "schedules": schedules,
        "max_relative_profit_gap": worst,
        "mass_full": mass_full,
        "mass_effective": mass_eff,
        "well_definedness_gap": tr.well_definedness_gap,
    }
    verdict = PASS if (worst <= gap_bound and mass_ok) else FAIL
    return TheoremCheck("thm-4-4", "effective profits equal profits", verdict, evidence, seed)


def verify_prop51(
    d: DiscreteProblem,
    gr: GoodsReduction,
    schedules: int = 20,
    seed: int = 0,
    tol: float = 1e-9,
) -> TheoremCheck:
    """Restricting to argmin-fiber goods preserves utilities and weakly
    improves every buyer's realized margin and the total profit."""
    rng = np.random.default_rng(seed)
    worst_u = 0.0
    worst_margin = np.inf
    worst_profit = np.inf
    for _ in range(schedules):
        v = random_schedule(d, rng)
        tv = build_tilde_price(d, gr, v)
        pu = price_to_utility(d, v)
        ptv = price_to_utility(d, tv)
        worst_u = max(worst_u, float(np.abs(pu.u - ptv.u).max()))
        margin_v = v.values[pu.allocation] - d.costs[pu.allocation]
        margin_tv = tv.values[ptv.allocation] - d.costs[ptv.allocation]
        worst_margin = min(worst_margin, float((margin_tv - margin_v).min()))
        worst_profit = min(worst_profit, ptv.profit - pu.profit)
    evidence = {
        "schedules": schedules,
        "max_utility_drift": worst_u,
        "min_margin_improvement": worst_margin,
        "min_profit_improvement": worst_profit,
    }
    ok = worst_u <= tol and worst_margin >= -tol and worst_profit >= -tol
    return TheoremCheck(
        "prop-5-1", "restricted schedule preserves utilities, improves margins", PASS if ok else FAIL, evidence, seed
    )


def verify_cor52(
    d: DiscreteProblem,
    gr: GoodsReduction,
    seed: int = 0,
    starts: int = 4,
    tol: float = 1e-6,
) -> TheoremCheck:
    """Optimizing over argmin-fiber representatives loses no profit.

    The restricted search runs on the effective problem; its lifted best
    warm-starts the unrestricted search, so attainment is certified and
    only a genuine unrestricted improvement can fail the check.
    """
    from .solver import solve_localsearch

    restricted = solve_localsearch(gr.effective_problem, starts=starts, seed=seed)
    lifted = lift_schedule(d, gr, restricted.best_schedule)
    lifted_profit = price_to_utility(d, lifted).profit
    unrestricted = solve_localsearch(
        d, starts=starts + 1, seed=seed, initial_schedules=[lifted]
    )
    # the unrestricted best, projected back onto the argmin supports, must
    # not lose profit either
    projected = build_tilde_price(d, gr, unrestricted.best_schedule)
    projected_profit = price_to_utility(d, projected).profit
    gap = abs(unrestricted.best_profit - restricted.best_profit)
    evidence = {
        "restricted_profit": restricted.best_profit,
        "lifted_profit": lifted_profit,
        "unrestricted_profit": unrestricted.best_profit,
        "projected_profit": projected_profit,
        "gap": gap,
    }
    ok = gap <= tol and projected_profit >= unrestricted.best_profit - 1e-9
    return TheoremCheck(
        "cor-5-2", "restricted-support optimum equals the unrestricted optimum", PASS if ok else FAIL, evidence, seed
    )


def verify_transfer(
    problem: ScreeningProblem,
    d: DiscreteProblem,
    reduction,
    effective_problem: Optional[ScreeningProblem] = None,
    seed: int = 0,
    b3_samples: int = 32,
) -> TheoremCheck:
    """Conditions proven on the full problem must hold on the reduction.

    Needs a closed-form effective preference to run the derivative-based
    checks; it is validated entry by entry against the reduction's payoff
    table before being trusted.
    """
    full_b1 = check_b1(problem, d)
    full_b2g = check_b2_side(problem, d, "goods", seed=seed)
    full_b2t = check_b2_side(problem, d, "types", seed=seed)
    if not (full_b1.passed and full_b2g.passed and full_b2t.passed):
        return TheoremCheck(
            "transfer",
            "full problem does not satisfy the hypotheses",
            NOT_APPLICABLE,
            {
                "b1": full_b1.verdict,
                "b2_goods": full_b2g.verdict,
                "b2_types": full_b2t.verdict,
            },
            seed,
        )
    effective_problem = effective_problem or reduction.effective_screening
    if effective_problem is None:
        return TheoremCheck(
            "transfer",
            "no closed-form effective preference available",
            NOT_APPLICABLE,
            {"reason": "supply effective_problem to run derivative checks"},
            seed,
        )
    d_eff = assemble(effective_problem)
    # the closed form must reproduce the reduction's payoff table
    table = reduction.effective_problem.payoff
    if d_eff.payoff.shape != table.shape:
        raise PreconditionError(
            f"effective problem shape {d_eff.payoff.shape} does not match the reduction {table.shape}"
        )
    mismatch = float(np.abs(d_eff.payoff - table).max())
    if mismatch > 1e-9:
        raise PreconditionError(
            f"effective preference disagrees with the reduction table by {mismatch:.3e}"
        )

    results = run_condition_suite(effective_problem, d_eff, seed=seed, b3_samples=b3_samples)
    required = ("b1", "b2_goods", "b2_types", "b3")
    verdicts = {name: results[name].verdict for name in results}
    ok = all(results[name].verdict == "pass" for name in required)
    evidence = {
        "payoff_mismatch": mismatch,
        "effective_verdicts": verdicts,
        "full_verdicts": {"b1": full_b1.verdict, "b2_goods": full_b2g.verdict, "b2_types": full_b2t.verdict},
    }
    return TheoremCheck(
        "transfer",
        "conditions transfer to the effective problem",
        PASS if ok else FAIL,
        evidence,
        seed,
    )
