import numpy as np
import pytest

from screenlab.domain import DiscreteProblem, assemble
from screenlab.presets import build_problem, preset_config


@pytest.fixture(scope="session")
def example_33():
    problem = build_problem(preset_config("example-3-3"))
    return problem, assemble(problem)


@pytest.fixture(scope="session")
def types_demo():
    problem = build_problem(preset_config("reduce-types-demo"))
    return problem, assemble(problem)


@pytest.fixture(scope="session")
def goods_demo():
    problem = build_problem(preset_config("reduce-goods-demo"))
    return problem, assemble(problem)


@pytest.fixture(scope="session")
def bilinear_1d():
    problem = build_problem(preset_config("bilinear-1d"))
    return problem, assemble(problem)


@pytest.fixture(scope="session")
def bilinear_2d():
    problem = build_problem(preset_config("bilinear-2d"))
    return problem, assemble(problem)


def random_discrete(rng: np.random.Generator, duplicate_goods: bool = False) -> DiscreteProblem:
    """Small random instance for transform/solver property tests."""
    n_types = int(rng.integers(3, 12))
    n_goods = int(rng.integers(2, 8))
    payoff = rng.normal(0.0, 1.0, size=(n_types, n_goods))
    costs = rng.uniform(0.0, 1.0, size=n_goods)
    if duplicate_goods and n_goods >= 3:
        payoff[:, 1] = payoff[:, 0]
        costs[1] = costs[0]
    return DiscreteProblem(
        type_points=rng.uniform(0.0, 1.0, size=(n_types, 1)),
        weights=rng.uniform(0.0, 2.0, size=n_types),
        good_points=np.sort(rng.uniform(0.0, 1.0, size=n_goods))[:, None],
        costs=costs,
        phi_index=int(rng.integers(n_goods)),
        payoff=payoff,
    )
