"""Command-line front end.

    polydich scenario list
    polydich certify --scenario diag_dichotomy --lambda 1 [--lyapunov]
    polydich admissibility --scenario counterexample
    polydich green-solve --scenario diag_dichotomy --forcing y.csv
    polydich robustness --scenario scalar_contraction --c-grid 0,0.01,0.05

Exit codes: 0 pass, 2 verdict fail, 1 computational error, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .admissibility import GridFunction, admissibility_probe, default_battery, green_solve, time_grid, verify_solution
from .dichotomy import (ProjectionFamily, _jsonable, certify, default_pairs, fit_dichotomy,
                        splitting_projection)
from .errors import PolyDichError
from .evolution import SCENARIOS, Scenario, ScenarioSpec, load_generator_csv, scenario
from .norms import constant_norm, lyapunov_norm
from .robustness import robustness_experiment, scalar_perturbation, sweep_to_dict, write_sweep_csv

SCHEMA = "polydich-report/1"
EXIT_PASS, EXIT_ERROR, EXIT_FAIL, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("polydich")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--tmax", type=float, default=1e3, help="time horizon (>= 10)")
    p.add_argument("--density", type=int, default=64, help="grid points per decade (>= 8)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="directory for JSON/CSV outputs")
    p.add_argument("--tol", type=float, default=1e-6, help="residual tolerance")
    p.add_argument("-v", "--verbose", action="store_true")


def _scenario_args(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", help="built-in scenario name")
    g.add_argument("--scenario-file", type=Path, help='JSON document {"name": ..., "params": {...}}')
    g.add_argument("--generator-csv", type=Path, help="CSV of t and row-major A(t)")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="extra scenario parameter (repeatable)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--contraction", action="store_true", help="use P = Id")
    mode.add_argument("--expansion", action="store_true", help="use P = 0")
    p.add_argument("--lyapunov", action="store_true", help="measure in the Lyapunov norm of the family")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polydich", description="Polynomial dichotomies: certification, "
                     "admissibility and robustness experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sc = sub.add_parser("scenario", help="scenario library")
    sc.add_argument("action", choices=["list"])

    p = sub.add_parser("certify", help="fit and check the dichotomy inequalities")
    _scenario_args(p)
    _common(p)

    p = sub.add_parser("admissibility", help="Green-operator probe over a forcing battery")
    _scenario_args(p)
    _common(p)
    p.add_argument("--battery", choices=["default", "constants", "bumps", "decay"], default="default")
    p.add_argument("--forcing", type=Path, action="append", default=[], help="extra forcing CSV (t, v1..vd)")

    p = sub.add_parser("green-solve", help="bounded solution for one forcing")
    _scenario_args(p)
    _common(p)
    p.add_argument("--forcing", type=Path, help="forcing CSV; a constant forcing when omitted")

    p = sub.add_parser("robustness", help="perturbation sweep B(t) = c/t^(1+eps) Id")
    _scenario_args(p)
    _common(p)
    p.add_argument("--c-grid", required=True, help="comma-separated perturbation sizes")
    p.add_argument("--b-eps", type=float, default=0.0, help="decay exponent eps of the perturbation")
    p.add_argument("--method", choices=["auto", "generator", "picard"], default="auto")
    p.add_argument("--threshold", type=float, default=float("inf"),
                   help="only sizes below this must pass for exit 0")
    return parser


# ---------------------------------------------------------------------------


def _check_config(args):
    if args.tmax < 10:
        raise UsageError("--tmax must be at least 10")
    if args.density < 8:
        raise UsageError("--density must be at least 8")
    if args.tol <= 0:
        raise UsageError("--tol must be positive")


def _load_scenario(args) -> Scenario:
    if args.generator_csv is not None:
        fam = load_generator_csv(args.generator_csv)
        return Scenario(ScenarioSpec("generator_csv", {"path": str(args.generator_csv)}), fam)
    if args.scenario_file is not None:
        spec = ScenarioSpec.from_json(args.scenario_file.read_text())
    else:
        params = {}
        for k, v in (("lam", args.lam), ("eps", args.eps), ("theta", args.theta), ("dim", args.dim)):
            if v is not None:
                params[k] = v
        for item in args.param:
            if "=" not in item:
                raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            params[k] = float(v)
        spec = ScenarioSpec(args.scenario, params)
    if spec.name not in SCENARIOS:
        raise UsageError(f"unknown scenario {spec.name!r}; try 'polydich scenario list'")
    try:
        return scenario(spec)
    except TypeError as exc:
        raise UsageError(f"bad parameters for {spec.name}: {exc}") from None


def _projection(args, sc: Scenario):
    d = sc.family.dim
    if args.contraction:
        return ProjectionFamily.identity(d)
    if args.expansion:
        return ProjectionFamily.zero(d)
    if sc.projection is not None:
        return sc.projection
    return splitting_projection(sc.family, constant_norm(d))


def _norms(args, sc, proj):
    if args.lyapunov:
        return lyapunov_norm(sc.family, proj, horizon=10 * args.tmax, density=args.density)
    return constant_norm(sc.family.dim)


def _emit(args, name: str, doc: dict):
    doc = {"schema": SCHEMA, "command": args.command, "seed": args.seed, **doc}
    text = json.dumps(_jsonable(doc), sort_keys=True, indent=2)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / name).write_text(text + "\n")
    print(text)


def _config_doc(args, sc):
    return {"scenario": sc.spec.to_json(), "tmax": args.tmax, "density": args.density, "tol": args.tol}


def cmd_scenario(args) -> int:
    for name, ctor in sorted(SCENARIOS.items()):
        doc = (ctor.__doc__ or "").strip().splitlines()
        print(f"{name:24s} {doc[0] if doc else ''}")
    return EXIT_PASS


def cmd_certify(args) -> int:
    sc = _load_scenario(args)
    proj = _projection(args, sc)
    norms = _norms(args, sc, proj)
    cert = certify(sc.family, norms, proj, default_pairs(args.tmax), seed=args.seed)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        cert.write_point_cloud(args.out / "point_cloud.csv")
    doc = cert.to_dict()
    doc.pop("residuals")
    _emit(args, "certificate.json", {"config": _config_doc(args, sc), "norm": norms.kind,
                                     "projection_rank": proj.rank, "certificate": doc,
                                     "verdict": "pass" if cert.passed else "fail"})
    return EXIT_PASS if cert.passed else EXIT_FAIL


def _constants(args, sc, norms, proj):
    """(D, lambda, bound factor) for the Green-operator bound, when known."""
    cert = fit_dichotomy(sc.family, norms, proj, default_pairs(args.tmax), seed=args.seed)
    if cert.passed:
        lam = min(v for v in (cert.lambda_stable, cert.lambda_unstable) if v is not None)
        return cert.D, lam, None
    return None, None, sc.reference.get("green_bound")


def _battery(args, grid, d):
    full = default_battery(grid, d)
    prefix = {"default": "", "constants": "const", "bumps": "bump", "decay": "decay"}[args.battery]
    bat = {k: v for k, v in full.items() if k.startswith(prefix)}
    for path in args.forcing:
        y = GridFunction.from_csv(path)
        if y.dim != d:
            raise UsageError(f"{path}: forcing has dimension {y.dim}, family has {d}")
        bat[path.stem] = GridFunction(grid, y(grid))
    return bat


def cmd_admissibility(args) -> int:
    sc = _load_scenario(args)
    proj = _projection(args, sc)
    norms = _norms(args, sc, proj)
    grid = time_grid(args.tmax, args.density)
    D, lam, factor = _constants(args, sc, norms, proj)
    summary = admissibility_probe(sc.family, proj, norms, _battery(args, grid, sc.family.dim), grid,
                                  D=D, lam=lam, bound_factor=factor, tol=args.tol, seed=args.seed)
    _emit(args, "admissibility.json", {"config": _config_doc(args, sc), "D": D, "lambda": lam,
                                       "bound_factor": factor, **summary.to_dict(),
                                       "verdict": "pass" if summary.admissible else "fail"})
    return EXIT_PASS if summary.admissible else EXIT_FAIL


def cmd_green_solve(args) -> int:
    sc = _load_scenario(args)
    proj = _projection(args, sc)
    norms = _norms(args, sc, proj)
    grid = time_grid(args.tmax, args.density)
    d = sc.family.dim
    if args.forcing is not None:
        y = GridFunction.from_csv(args.forcing)
        if y.dim != d:
            raise UsageError(f"forcing has dimension {y.dim}, family has {d}")
        y = GridFunction(grid, y(grid))
    else:
        y = GridFunction(grid, np.ones((len(grid), d)))
    D, lam, factor = _constants(args, sc, norms, proj)
    x, rep = green_solve(sc.family, proj, y, norms, D, lam)
    rep.residual = verify_solution(sc.family, x, y)
    if factor is not None:
        rep.bound = factor * rep.y_L
    ok = rep.residual <= args.tol and (rep.bound is None or rep.x_inf <= rep.bound * 1.05)
    rep.passed = bool(ok)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        x.to_csv(args.out / "solution.csv")
    _emit(args, "green_solve.json", {"config": _config_doc(args, sc), "report": rep.to_dict(),
                                     "verdict": "pass" if ok else "fail"})
    return EXIT_PASS if ok else EXIT_FAIL


def _parse_c_grid(text: str) -> list[float]:
    items = [s for s in text.replace(" ", "").split(",") if s]
    if not items:
        raise UsageError("--c-grid is empty")
    try:
        cs = [float(s) for s in items]
    except ValueError:
        raise UsageError(f"--c-grid must be numbers, got {text!r}") from None
    if any(c < 0 for c in cs):
        raise UsageError("--c-grid values must be non-negative")
    return cs


def cmd_robustness(args) -> int:
    cs = _parse_c_grid(args.c_grid)
    sc = _load_scenario(args)
    proj = _projection(args, sc)
    norms = constant_norm(sc.family.dim)
    B = scalar_perturbation(sc.family.dim, 1.0, args.b_eps)
    rows = robustness_experiment(sc.family, proj, norms, B, cs, method=args.method,
                                 pairs=default_pairs(args.tmax), seed=args.seed)
    ok = all(r.passed for r in rows if r.c < args.threshold)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(rows, args.out / "sweep.csv")
    _emit(args, "robustness.json", {"config": _config_doc(args, sc), "b_eps": args.b_eps,
                                    "method": args.method, "threshold": args.threshold,
                                    "sweep": sweep_to_dict(rows), "verdict": "pass" if ok else "fail"})
    return EXIT_PASS if ok else EXIT_FAIL


COMMANDS = {
    "scenario": cmd_scenario,
    "certify": cmd_certify,
    "admissibility": cmd_admissibility,
    "green-solve": cmd_green_solve,
    "robustness": cmd_robustness,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command != "scenario":
            _check_config(args)
        with warnings.catch_warnings():
            if not getattr(args, "verbose", False):
                warnings.simplefilter("ignore", RuntimeWarning)
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"polydich: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PolyDichError, np.linalg.LinAlgError, OSError, ValueError) as exc:
        print(f"polydich: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
