"""Built-in example instances.

Each preset returns a plain config dict (the same schema the CLI ingests)
so acceptance runs need no external files.  The two reduction demos also
know their effective preference in closed form, which the transfer check
validates against the reduction's payoff table before trusting.
"""

from __future__ import annotations

from .domain import Box, ScreeningProblem
from .expr import parse

__all__ = ["PRESETS", "preset_config", "build_problem", "effective_screening_for"]


def _example_3_3() -> dict:
    """One unit-interval type dimension, two goods, bilinear preference.

    The goods list {0, 1} is not convex, so the feasible utility class is
    not convex and the optimal price is not unique: the profit curve has
    two symmetric maxima.
    """
    return {
        "dims": {"m": 1, "n": 1},
        "domain_x": {"lower": [0.0], "upper": [1.0], "resolution": [2001]},
        "domain_y": {"points": [[0.0], [1.0]]},
        "b": "x1*y1 + y1",
        "cost": "y1^2",
        "density": "60*x1^2 - 80*x1 + 29",
        "null_good": [0.0],
        "solver": {"method": "brute", "price_step": 1e-4, "v_max": 2.0, "opt_tol": 1e-3},
    }


def _reduce_types_demo() -> dict:
    """Two type dimensions that only matter through their sum."""
    return {
        "dims": {"m": 2, "n": 1},
        "domain_x": {"lower": [0.0, 0.0], "upper": [1.0, 1.0], "resolution": [41, 41]},
        "domain_y": {"lower": [0.0], "upper": [1.0], "resolution": [41]},
        "b": "(x1+x2)*y1",
        "cost": "y1^2",
        "density": "1",
        "null_good": [0.0],
        "solver": {"method": "local", "starts": 6, "seed": 0},
    }


def _reduce_goods_demo() -> dict:
    """Two good dimensions that only matter through their sum; quadratic
    costs make one fiber member strictly cheapest."""
    return {
        "dims": {"m": 1, "n": 2},
        "domain_x": {"lower": [0.0], "upper": [1.0], "resolution": [201]},
        "domain_y": {"lower": [0.0, 0.0], "upper": [1.0, 1.0], "resolution": [41, 41]},
        "b": "x1*(y1+y2)",
        "cost": "y1^2 + 2*y2^2",
        "density": "1",
        "null_good": [0.0, 0.0],
        "solver": {"method": "local", "starts": 4, "seed": 0},
    }


def _bilinear_demo(m: int) -> dict:
    b = " + ".join(f"x{i}*y{i}" for i in range(1, m + 1))
    cost = " + ".join(f"y{i}^2" for i in range(1, m + 1))
    res = 11 if m == 1 else 9
    return {
        "dims": {"m": m, "n": m},
        "domain_x": {"lower": [0.0] * m, "upper": [1.0] * m, "resolution": [res] * m},
        "domain_y": {"lower": [0.0] * m, "upper": [1.0] * m, "resolution": [res] * m},
        "b": b,
        "cost": cost,
        "density": "1",
        "null_good": [0.0] * m,
        "solver": {"method": "local", "starts": 4, "seed": 0},
    }


PRESETS = {
    "example-3-3": _example_3_3,
    "reduce-types-demo": _reduce_types_demo,
    "reduce-goods-demo": _reduce_goods_demo,
    "bilinear-1d": lambda: _bilinear_demo(1),
    "bilinear-2d": lambda: _bilinear_demo(2),
}


def preset_config(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]()


def build_problem(config: dict) -> ScreeningProblem:
    """Construct a ScreeningProblem from a functional-form config dict."""
    from .domain import ToleranceSet

    m, n = config["dims"]["m"], config["dims"]["n"]

    def domain(spec, dim):
        if "points" in spec:
            return [list(map(float, p)) for p in spec["points"]]
        return Box(tuple(spec["lower"]), tuple(spec["upper"]), tuple(spec["resolution"]))

    tol_kwargs = config.get("tolerances", {})
    return ScreeningProblem(
        m=m,
        n=n,
        domain_x=domain(config["domain_x"], m),
        domain_y=domain(config["domain_y"], n),
        b=parse(config["b"], (m, n)),
        cost=parse(config["cost"], (m, n)),
        density=parse(config["density"], (m, n)),
        null_good=config["null_good"],
        tolerances=ToleranceSet(**tol_kwargs),
    )


def effective_screening_for(name: str) -> ScreeningProblem | None:
    """Closed-form effective problem for the reduction demos.

    Types demo: effective types z = x1 + x2 live on [0, 2] with preference
    z * y.  Goods demo (base type 0): effective goods w = y1 + y2 live on
    [0, 2] with preference x * w.  Grids match the reductions' cluster
    orderings, which the transfer check re-validates numerically.
    """
    if name == "reduce-types-demo":
        return ScreeningProblem(
            m=1,
            n=1,
            domain_x=Box((0.0,), (2.0,), (81,)),
            domain_y=Box((0.0,), (1.0,), (41,)),
            b=parse("x1*y1", (1, 1)),
            cost=parse("y1^2", (1, 1)),
            density=parse("1", (1, 1)),
            null_good=[0.0],
        )
    if name == "reduce-goods-demo":
        return ScreeningProblem(
            m=1,
            n=1,
            domain_x=Box((0.0,), (1.0,), (201,)),
            domain_y=Box((0.0,), (2.0,), (81,)),
            b=parse("x1*y1", (1, 1)),
            cost=parse("0.6666666666666666*y1^2", (1, 1)),
            density=parse("1", (1, 1)),
            null_good=[0.0],
        )
    return None
