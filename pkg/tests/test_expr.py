import numpy as np
import pytest

from screenlab.expr import (
    DomainError,
    ParseError,
    differentiate,
    evaluate,
    parse,
    to_string,
)


def test_parse_bilinear_plus_linear():
    e = parse("x1*y1 + y1", (1, 1))
    assert evaluate(e, x=[2.0], y=[3.0]) == 9.0


def test_parse_constant_zero():
    e = parse("0", (2, 3))
    assert evaluate(e, x=[1.0, 1.0], y=[1.0, 1.0, 1.0]) == 0.0


def test_parse_arity_and_errors():
    parse("x1*(y1+y2)", (1, 2))
    with pytest.raises(ParseError, match="x2 out of range"):
        parse("x2*y1", (1, 1))
    with pytest.raises(ParseError) as err:
        parse("x1 + * y1", (1, 1))
    assert err.value.position == 5
    with pytest.raises(ParseError, match="unknown identifier"):
        parse("x1 + foo", (1, 1))
    with pytest.raises(ParseError, match="constant"):
        parse("x1^y1", (1, 1))


def test_differentiate_polynomial_rules():
    e = parse("x1*y1 + y1", (1, 1))
    dx = differentiate(e, "x1")
    assert to_string(dx) == "y1"
    dxy = differentiate(dx, "y1")
    assert evaluate(dxy) == 1.0
    c = parse("y1^2", (0, 1))
    dc = differentiate(c, "y1")
    assert evaluate(dc, y=[3.0]) == 6.0


def test_evaluate_quadratic_density():
    dens = parse("60*x1^2 - 80*x1 + 29", (1, 0))
    assert evaluate(dens, x=[1.0]) == 9.0
    assert evaluate(dens, x=[0.0]) == 29.0


def test_evaluate_missing_binding_and_domain_error():
    e = parse("x1*y1", (1, 1))
    with pytest.raises(DomainError, match="missing binding"):
        evaluate(e, x=[1.0])
    lg = parse("log(x1)", (1, 0))
    with pytest.raises(DomainError):
        evaluate(lg, x=[0.0])


def test_evaluate_broadcasts_pair_grids():
    e = parse("x1*y1 + y1", (1, 1))
    X = np.linspace(0, 1, 5)[:, None]
    Y = np.array([[0.0], [1.0]])
    out = evaluate(e, x=X[:, None, :], y=Y[None, :, :])
    assert out.shape == (5, 2)
    assert np.allclose(out[:, 1], X[:, 0] + 1)


def _random_polynomial(rng, m, n, depth=0):
    roll = rng.random()
    names = [f"x{i+1}" for i in range(m)] + [f"y{j+1}" for j in range(n)]
    if depth >= 3 or roll < 0.3:
        if rng.random() < 0.5:
            return f"{rng.uniform(-2, 2):.6f}"
        return names[rng.integers(len(names))]
    left = _random_polynomial(rng, m, n, depth + 1)
    right = _random_polynomial(rng, m, n, depth + 1)
    op = rng.choice(["+", "-", "*"])
    if rng.random() < 0.15:
        return f"({left})^{int(rng.integers(2, 4))}"
    return f"({left} {op} {right})"


def test_derivative_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(60):
        m, n = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        e = parse(_random_polynomial(rng, m, n), (m, n))
        var_kind = "x" if rng.random() < 0.5 else "y"
        dim = m if var_kind == "x" else n
        idx = int(rng.integers(dim))
        de = differentiate(e, f"{var_kind}{idx+1}")
        x = rng.uniform(0.5, 1.5, m)
        y = rng.uniform(0.5, 1.5, n)
        point = x if var_kind == "x" else y
        h = 1e-4 * max(1.0, abs(point[idx]))
        hi, lo = point.copy(), point.copy()
        hi[idx] += h
        lo[idx] -= h
        if var_kind == "x":
            fd = (evaluate(e, x=hi, y=y) - evaluate(e, x=lo, y=y)) / (2 * h)
        else:
            fd = (evaluate(e, x=x, y=hi) - evaluate(e, x=x, y=lo)) / (2 * h)
        sym = evaluate(de, x=x, y=y)
        assert abs(sym - fd) <= 1e-6 * max(1.0, abs(sym), abs(fd))


def test_differentiation_is_linear():
    rng = np.random.default_rng(5)
    for _ in range(40):
        e1 = parse(_random_polynomial(rng, 1, 1), (1, 1))
        e2 = parse(_random_polynomial(rng, 1, 1), (1, 1))
        a = float(rng.uniform(-3, 3))
        combo = parse(f"{a!r}*({to_string(e1)}) + ({to_string(e2)})", (1, 1))
        d_combo = differentiate(combo, "x1")
        d1 = differentiate(e1, "x1")
        d2 = differentiate(e2, "x1")
        for _ in range(5):
            x = rng.uniform(0.5, 1.5, 1)
            y = rng.uniform(0.5, 1.5, 1)
            lhs = evaluate(d_combo, x=x, y=y)
            rhs = a * evaluate(d1, x=x, y=y) + evaluate(d2, x=x, y=y)
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_print_parse_round_trip_is_exact():
    rng = np.random.default_rng(7)
    for _ in range(30):
        m, n = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        e = parse(_random_polynomial(rng, m, n), (m, n))
        e2 = parse(to_string(e), (m, n))
        for _ in range(100 // 30 + 4):
            x = rng.uniform(-1.5, 1.5, m)
            y = rng.uniform(-1.5, 1.5, n)
            assert evaluate(e, x=x, y=y, validate=False) == evaluate(e2, x=x, y=y, validate=False)


def test_functions_chain_rule():
    e = parse("exp(x1*y1) + sin(x1) - cos(y1) + sqrt(x1) + log(y1)", (1, 1))
    de = differentiate(e, "x1")
    x, y = 0.7, 1.3
    expected = y * np.exp(x * y) + np.cos(x) + 0.5 / np.sqrt(x)
    assert abs(evaluate(de, x=[x], y=[y]) - expected) < 1e-12
    dy = differentiate(e, "y1")
    expected_y = x * np.exp(x * y) + np.sin(y) + 1 / y
    assert abs(evaluate(dy, x=[x], y=[y]) - expected_y) < 1e-12


def test_nested_power_round_trip():
    e = parse("(x1^2)^3", (1, 0))
    e2 = parse(to_string(e), (1, 0))
    assert evaluate(e, x=[1.3]) == evaluate(e2, x=[1.3])
    assert abs(evaluate(e, x=[1.3]) - 1.3**6) < 1e-12
