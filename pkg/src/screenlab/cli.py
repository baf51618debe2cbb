"""Config ingestion, subcommand dispatch, and report emission.

Subcommands: check | reduce | solve | verify | example.  Exit code 0 means
success, 1 means verdict failures are present in an otherwise successful
run, 2 means a configuration or precondition error.  Reports are JSON with
sorted keys, so identical (config, seed, version) runs produce identical
bytes apart from the wall-time field.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from importlib.metadata import version as _pkg_version
from typing import Optional

import numpy as np
from jsonschema import Draft202012Validator

from .conditions import run_condition_suite
from .domain import (
    DiscreteProblem,
    PreconditionError,
    ScreeningProblem,
    assemble,
)
from .expr import ExpressionError
from .presets import PRESETS, build_problem, effective_screening_for, preset_config
from .reduction import check_effective_cost_convexity, reduce_goods, reduce_types
from .solver import SolveResult, default_bounds, profit_curve, solve_bruteforce, solve_localsearch
from .verify import (
    TheoremCheck,
    verify_cor52,
    verify_lemma43,
    verify_prop31,
    verify_prop51,
    verify_thm44,
    verify_transfer,
)

_NUM_ARRAY = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_POINTS = {"type": "array", "items": _NUM_ARRAY, "minItems": 1}
_DOMAIN = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"lower": _NUM_ARRAY, "upper": _NUM_ARRAY, "resolution": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1}},
            "required": ["lower", "upper", "resolution"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"points": _POINTS},
            "required": ["points"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "dims": {
            "type": "object",
            "properties": {"m": {"type": "integer", "minimum": 1}, "n": {"type": "integer", "minimum": 1}},
            "required": ["m", "n"],
            "additionalProperties": False,
        },
        "domain_x": _DOMAIN,
        "domain_y": _DOMAIN,
        "b": {"type": "string"},
        "cost": {"type": "string"},
        "density": {"type": "string"},
        "null_good": _NUM_ARRAY,
        "tolerances": {
            "type": "object",
            "properties": {
                "fd_step": {"type": "number"},
                "cluster_tol": {"type": "number"},
                "convex_tol": {"type": "number"},
                "rank_tol": {"type": "number"},
                "newton_tol": {"type": "number"},
                "newton_max_iter": {"type": "integer"},
            },
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "method": {"enum": ["brute", "local"]},
                "starts": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "price_step": {"type": "number"},
                "v_max": {"type": "number"},
                "opt_tol": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "tables": {
            "type": "object",
            "properties": {
                "type_points": _POINTS,
                "weights": _NUM_ARRAY,
                "good_points": _POINTS,
                "costs": _NUM_ARRAY,
                "payoff": _POINTS,
                "phi_index": {"type": "integer", "minimum": 0},
            },
            "required": ["type_points", "weights", "good_points", "costs", "payoff", "phi_index"],
            "additionalProperties": False,
        },
    },
    "required": ["dims"],
    "additionalProperties": False,
    "oneOf": [
        {"required": ["domain_x", "domain_y", "b", "cost", "density", "null_good"]},
        {"required": ["tables"]},
    ],
}

_validator = Draft202012Validator(CONFIG_SCHEMA)


class ConfigError(ValueError):
    pass


def _flatten_errors(errors, in_context=False):
    for err in errors:
        yield err, in_context
        if err.context:
            yield from _flatten_errors(err.context, in_context=True)


def validate_config(config: dict) -> None:
    errors = list(_flatten_errors(_validator.iter_errors(config)))
    if not errors:
        return
    # deepest, most specific complaint wins; direct violations beat errors
    # surfaced from inside oneOf branches, combinators rank last
    errors.sort(key=lambda t: (len(list(t[0].absolute_path)), not t[1], t[0].validator != "oneOf"))
    err = errors[-1][0]
    pointer = "/" + "/".join(str(p) for p in err.absolute_path)
    raise ConfigError(f"invalid config at {pointer}: {err.message}")


def load_config(path: str) -> dict:
    with open(path) as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"not valid JSON: {exc}") from exc
    validate_config(config)
    return config


def load_inputs(config: dict) -> tuple[Optional[ScreeningProblem], DiscreteProblem]:
    """Problem and discrete data from a config; table-form configs carry no
    symbolic problem."""
    if "tables" in config:
        t = config["tables"]
        d = DiscreteProblem(
            type_points=np.asarray(t["type_points"], dtype=float),
            weights=np.asarray(t["weights"], dtype=float),
            good_points=np.asarray(t["good_points"], dtype=float),
            costs=np.asarray(t["costs"], dtype=float),
            phi_index=int(t["phi_index"]),
            payoff=np.asarray(t["payoff"], dtype=float),
        )
        return None, d
    problem = build_problem(config)
    return problem, assemble(problem)


# ---------------------------------------------------------------------------
# Serialization helpers


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def _num(x):
    """JSON-safe number: infinities become the string sentinel."""
    x = float(x)
    if math.isinf(x):
        return "not-offered"
    return x


def schedule_to_json(values: np.ndarray) -> list:
    return [_num(v) for v in values]


def solve_result_to_json(res: SolveResult) -> dict:
    return {
        "method": res.method,
        "best_profit": res.best_profit,
        "best_schedule": schedule_to_json(res.best_schedule.values),
        "all_optima": [schedule_to_json(s.values) for s in res.all_optima],
        "optima_count": len(res.all_optima),
        "uniqueness": ("multiple (discrete)" if len(res.all_optima) > 1 else "single (discrete)"),
        "seed": res.seed,
        "iterations": res.iterations,
        "trace": res.trace,
        "details": res.details,
    }


def write_json_atomic(path: str, payload: dict) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_curve_csv(path: str, curve: list[tuple[float, float]]) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write("price,profit\n")
            for price, profit in curve:
                fh.write(f"{price!r},{profit!r}\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _report_skeleton(config: dict, d: DiscreteProblem, seed: int) -> dict:
    return {
        "problem": {
            "hash": config_hash(config),
            "dims": config["dims"],
            "grid": {"types": d.n_types, "goods": d.n_goods},
        },
        "meta": {
            "seed": seed,
            "version": _version(),
            "wall_time_s": None,
        },
    }


def _version() -> str:
    try:
        return _pkg_version("screenlab")
    except Exception:  # pragma: no cover
        return "unknown"


def _has_failures(report: dict) -> bool:
    for name, entry in report.get("conditions", {}).items():
        # the strict fourth-derivative check is uniqueness evidence, not a
        # requirement; its failure does not flip the exit code
        if name == "b3u":
            continue
        if entry.get("verdict") == "fail":
            return True
    for entry in report.get("theorems", []):
        if entry.get("verdict") == "fail":
            return True
    return False


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_check(args) -> int:
    config = load_config(args.problem)
    problem, d = load_inputs(config)
    started = time.monotonic()
    report = _report_skeleton(config, d, args.seed)
    if problem is None:
        report["conditions"] = {
            name: {"name": name, "verdict": "not-applicable", "witnesses": [],
                   "details": {"reason": "table-form problems carry no expressions"}}
            for name in ("b0", "b1", "b2_goods", "b2_types", "b_linearity", "level_independence", "b3", "b3u")
        }
    else:
        results = run_condition_suite(problem, d, seed=args.seed, b3_samples=args.b3_samples)
        report["conditions"] = {name: r.to_dict() for name, r in results.items()}
    report["meta"]["wall_time_s"] = time.monotonic() - started
    out = args.report or _default_out(args.problem, ".report.json")
    write_json_atomic(out, report)
    print(f"wrote {out}")
    return 1 if _has_failures(report) else 0


def _reduction_mapping(reduction, mode: str) -> dict:
    if mode == "types":
        return {
            "mode": "types",
            "base_good": int(reduction.base_good),
            "quotient_map": reduction.quotient_map.tolist(),
            "representatives": reduction.representatives.tolist(),
            "effective_weights": reduction.effective_weights.tolist(),
            "well_definedness_gap": reduction.well_definedness_gap,
            "warnings": reduction.warnings,
        }
    return {
        "mode": "goods",
        "base_type": int(reduction.base_type),
        "fiber_map": reduction.fiber_map.tolist(),
        "representatives": reduction.representatives.tolist(),
        "effective_costs": reduction.effective_costs.tolist(),
        "argmin_sets": [s.tolist() for s in reduction.argmin_sets],
        "phi_fiber": int(reduction.phi_fiber),
        "effective_cost_convexity": check_effective_cost_convexity(reduction),
        "warnings": reduction.warnings,
    }


def _effective_config(config: dict, eff: DiscreteProblem) -> dict:
    dims = {"m": int(eff.type_points.shape[1]), "n": int(eff.good_points.shape[1])}
    return {
        "dims": dims,
        "tables": {
            "type_points": eff.type_points.tolist(),
            "weights": eff.weights.tolist(),
            "good_points": eff.good_points.tolist(),
            "costs": eff.costs.tolist(),
            "payoff": eff.payoff.tolist(),
            "phi_index": int(eff.phi_index),
        },
        "solver": config.get("solver", {}),
    }


def _cmd_reduce(args) -> int:
    config = load_config(args.problem)
    problem, d = load_inputs(config)
    if problem is None:
        raise PreconditionError("reduction needs a functional-form problem (expressions)")
    if args.mode == "types":
        reduction = reduce_types(d, problem)
    else:
        reduction = reduce_goods(d, problem)
    out = args.out or _default_out(args.problem, ".reduced.json")
    eff_config = _effective_config(config, reduction.effective_problem)
    validate_config(eff_config)
    write_json_atomic(out, eff_config)
    mapping_path = out.rsplit(".json", 1)[0] + ".mapping.json"
    write_json_atomic(mapping_path, _reduction_mapping(reduction, args.mode))
    print(f"wrote {out}")
    print(f"wrote {mapping_path}")
    return 0


def _solver_settings(config: dict, args) -> dict:
    settings = dict(config.get("solver", {}))
    if getattr(args, "method", None):
        settings["method"] = args.method
    if getattr(args, "seed", None) is not None:
        settings["seed"] = args.seed
    settings.setdefault("method", "local")
    settings.setdefault("seed", 0)
    settings.setdefault("starts", 8)
    settings.setdefault("price_step", 1e-2)
    return settings


def _solve_with(d: DiscreteProblem, settings: dict) -> SolveResult:
    lo, hi = default_bounds(d)
    if "v_max" in settings:
        hi = np.minimum(hi, float(settings["v_max"]))
        hi = np.maximum(hi, lo)  # never below cost
    opt_tol = settings.get("opt_tol")
    if settings["method"] == "brute":
        return solve_bruteforce(d, float(settings["price_step"]), bounds=(lo, hi), opt_tol=opt_tol)
    return solve_localsearch(
        d, starts=int(settings["starts"]), seed=int(settings["seed"]), bounds=(lo, hi), opt_tol=opt_tol
    )


def _cmd_solve(args) -> int:
    config = load_config(args.problem)
    problem, d = load_inputs(config)
    started = time.monotonic()
    settings = _solver_settings(config, args)
    result = _solve_with(d, settings)
    report = _report_skeleton(config, d, settings["seed"])
    report["solve"] = solve_result_to_json(result)
    if args.curve is not None:
        lo, hi = default_bounds(d)
        if "v_max" in settings:
            hi = np.minimum(hi, float(settings["v_max"]))
        j = int(args.curve)
        curve = profit_curve(d, j, (float(lo[j]), float(hi[j])), args.curve_samples)
        curve_path = args.curve_out or _default_out(args.problem, f".curve{j}.csv")
        write_curve_csv(curve_path, curve)
        report["curve"] = {"good_index": j, "samples": args.curve_samples, "path": curve_path}
        print(f"wrote {curve_path}")
    report["meta"]["wall_time_s"] = time.monotonic() - started
    out = args.report or _default_out(args.problem, ".solve.json")
    write_json_atomic(out, report)
    print(f"wrote {out}")
    return 0


_THEOREMS = ("prop-3-1", "lemma-4-3", "thm-4-4", "prop-5-1", "cor-5-2", "transfer")


def _run_theorems(
    problem: Optional[ScreeningProblem],
    d: DiscreteProblem,
    which: list[str],
    seed: int,
    effective: Optional[ScreeningProblem] = None,
) -> list[TheoremCheck]:
    checks: list[TheoremCheck] = []

    def na(check_id: str, reason: str):
        checks.append(TheoremCheck(check_id, reason, "not-applicable", {"reason": reason}, seed))

    type_reduction = None
    goods_reduction = None
    if problem is not None and problem.m > problem.n:
        try:
            type_reduction = reduce_types(d, problem)
        except PreconditionError as exc:
            type_reduction = exc
    if problem is not None and problem.n > problem.m:
        try:
            goods_reduction = reduce_goods(d, problem)
        except PreconditionError as exc:
            goods_reduction = exc

    for name in which:
        if name == "prop-3-1":
            checks.append(verify_prop31(d, problem, seed=seed))
        elif name == "lemma-4-3":
            if isinstance(type_reduction, Exception):
                na(name, f"type reduction rejected: {type_reduction}")
            elif type_reduction is None:
                na(name, "needs surplus type dimensions")
            else:
                checks.append(verify_lemma43(d, type_reduction, seed=seed))
        elif name == "thm-4-4":
            if isinstance(type_reduction, Exception):
                na(name, f"type reduction rejected: {type_reduction}")
            elif type_reduction is None:
                na(name, "needs surplus type dimensions")
            else:
                checks.append(verify_thm44(d, type_reduction, seed=seed))
        elif name == "prop-5-1":
            if isinstance(goods_reduction, Exception):
                na(name, f"goods reduction rejected: {goods_reduction}")
            elif goods_reduction is None:
                na(name, "needs surplus good dimensions")
            else:
                checks.append(verify_prop51(d, goods_reduction, seed=seed))
        elif name == "cor-5-2":
            if isinstance(goods_reduction, Exception):
                na(name, f"goods reduction rejected: {goods_reduction}")
            elif goods_reduction is None:
                na(name, "needs surplus good dimensions")
            else:
                checks.append(verify_cor52(d, goods_reduction, seed=seed))
        elif name == "transfer":
            reduction = None
            for candidate in (type_reduction, goods_reduction):
                if candidate is not None and not isinstance(candidate, Exception):
                    reduction = candidate
            if problem is None or reduction is None:
                na(name, "needs a symbolic problem with a built reduction")
            else:
                checks.append(
                    verify_transfer(problem, d, reduction, effective_problem=effective, seed=seed)
                )
    return checks


def _cmd_verify(args) -> int:
    config = load_config(args.problem)
    problem, d = load_inputs(config)
    started = time.monotonic()
    which = list(_THEOREMS) if args.theorem == "all" else [args.theorem]
    checks = _run_theorems(problem, d, which, args.seed)
    report = _report_skeleton(config, d, args.seed)
    report["theorems"] = [c.to_dict() for c in checks]
    report["meta"]["wall_time_s"] = time.monotonic() - started
    out = args.report or _default_out(args.problem, ".verify.json")
    write_json_atomic(out, report)
    print(f"wrote {out}")
    return 1 if _has_failures(report) else 0


def _cmd_example(args) -> int:
    config = preset_config(args.name)
    problem, d = load_inputs(config)
    started = time.monotonic()
    seed = int(config.get("solver", {}).get("seed", 0))
    report = _report_skeleton(config, d, seed)

    results = run_condition_suite(problem, d, seed=seed, b3_samples=args.b3_samples)
    report["conditions"] = {name: r.to_dict() for name, r in results.items()}

    effective = effective_screening_for(args.name)
    checks = _run_theorems(problem, d, list(_THEOREMS), seed, effective=effective)
    report["theorems"] = [c.to_dict() for c in checks]

    reductions = {}
    if problem.m > problem.n:
        reduction = reduce_types(d, problem)
        reductions["types"] = _reduction_mapping(reduction, "types")
        eff_solve = _solve_with(reduction.effective_problem, _solver_settings(config, args))
        full_solve = _solve_with(d, _solver_settings(config, args))
        reductions["solve_gap"] = abs(eff_solve.best_profit - full_solve.best_profit)
        result = full_solve
    elif problem.n > problem.m:
        reduction = reduce_goods(d, problem)
        reductions["goods"] = _reduction_mapping(reduction, "goods")
        result = _solve_with(d, _solver_settings(config, args))
    else:
        result = _solve_with(d, _solver_settings(config, args))
    if reductions:
        report["reductions"] = reductions
    report["solve"] = solve_result_to_json(result)
    report["meta"]["wall_time_s"] = time.monotonic() - started

    out = args.report or f"{args.name}.report.json"
    write_json_atomic(out, report)
    print(f"wrote {out}")
    return 1 if _has_failures(report) else 0


def _default_out(problem_path: str, suffix: str) -> str:
    stem = os.path.basename(problem_path)
    if stem.endswith(".json"):
        stem = stem[: -len(".json")]
    return os.path.join(os.path.dirname(problem_path) or ".", stem + suffix)


# ---------------------------------------------------------------------------
# Entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="screenlab",
        description="Condition checks, reductions, and price optimization for discrete screening problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="run the condition suite and write a report")
    p.add_argument("--problem", required=True)
    p.add_argument("--report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--b3-samples", type=int, default=64)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("reduce", help="write the effective problem and mapping tables")
    p.add_argument("--problem", required=True)
    p.add_argument("--mode", choices=["types", "goods"], required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_reduce)

    p = sub.add_parser("solve", help="maximize profit over pinned schedules")
    p.add_argument("--problem", required=True)
    p.add_argument("--method", choices=["brute", "local"])
    p.add_argument("--seed", type=int)
    p.add_argument("--report")
    p.add_argument("--curve", type=int, help="also sweep this good's price and emit CSV")
    p.add_argument("--curve-samples", type=int, default=101)
    p.add_argument("--curve-out")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("verify", help="run theorem checks")
    p.add_argument("--problem", required=True)
    p.add_argument("--theorem", default="all", choices=["all", *_THEOREMS])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("example", help="materialize a built-in instance and run its pipeline")
    p.add_argument("--name", required=True, choices=sorted(PRESETS))
    p.add_argument("--report")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=["brute", "local"])
    p.add_argument("--b3-samples", type=int, default=64)
    p.set_defaults(func=_cmd_example)
    return parser


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, PreconditionError, ExpressionError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))
