"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line with the measured
quantities.  Run ``python tests/test_acceptance.py`` for the summary alone.
"""

import time
import warnings

import numpy as np
import pytest

from polydich.admissibility import (GridFunction, admissibility_probe, default_battery, green_solve, time_grid,
                                    verify_solution)
from polydich.cli import main as cli_main
from polydich.dichotomy import (fit_bounded_growth, fit_dichotomy, projection_norm_bound, splitting_projection)
from polydich.evolution import SCENARIOS, check_cocycle, from_generator, scenario
from polydich.norms import check_norm_equivalence, constant_norm, lyapunov_norm
from polydich.robustness import gronwall_growth_check, perturbed_family, robustness_experiment, scalar_perturbation

pytestmark = pytest.mark.acceptance


def _report(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    print(line, flush=True)
    return ok


def criterion_1():
    start = time.perf_counter()
    grid = np.unique(np.concatenate([np.logspace(0, 3, 13), [1.5, 2.5, 7.3, 16.0, 16.5, 130.2]]))
    worst_exact, worst_gen = 0.0, 0.0
    for name in SCENARIOS:
        fam = scenario(name).family
        worst_exact = max(worst_exact, check_cocycle(fam, grid, 1e-9).max_residual)
        if fam.generator is not None:
            gen = from_generator(fam.generator, fam.dim)
            worst_gen = max(worst_gen, check_cocycle(gen, grid, 1e-7).max_residual)
    elapsed = time.perf_counter() - start
    ok = worst_exact <= 1e-9 and worst_gen <= 1e-7 and elapsed < 10
    return ok, f"cocycle exact {worst_exact:.2e} <= 1e-9, generator {worst_gen:.2e} <= 1e-7, {elapsed:.1f}s < 10s"


def criterion_2():
    start = time.perf_counter()
    sc = scenario("diag_dichotomy", lam=1.0)
    cert = fit_dichotomy(sc.family, constant_norm(2), sc.projection)
    lyap = fit_dichotomy(sc.family, lyapunov_norm(sc.family, sc.projection, lam=1.0), sc.projection)
    elapsed = time.perf_counter() - start
    ok = (cert.passed and 0.95 <= cert.lambda_stable <= 1.05 and 0.95 <= cert.lambda_unstable <= 1.05
          and 1.0 <= cert.D + 1e-12 and cert.D <= 1.2 and lyap.D <= 1 + 1e-6 and elapsed < 30)
    return ok, (f"lambda_s {cert.lambda_stable:.4f}, lambda_u {cert.lambda_unstable:.4f}, D {cert.D:.4f}, "
                f"Lyapunov D {lyap.D:.8f}, {elapsed:.1f}s < 30s")


def criterion_3():
    sc = scenario("diag_dichotomy", lam=1.0)
    norms = constant_norm(2)
    cert = fit_dichotomy(sc.family, norms, sc.projection)
    lam = min(cert.lambda_stable, cert.lambda_unstable)
    grid = time_grid(1e3, 64)
    worst_res, worst_ratio, worst_ic = 0.0, 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for y in default_battery(grid, 2).values():
            x, rep = green_solve(sc.family, sc.projection, y, norms, cert.D, lam)
            worst_res = max(worst_res, verify_solution(sc.family, x, y))
            worst_ratio = max(worst_ratio, rep.x_inf / (rep.bound * 1.05))
            worst_ic = max(worst_ic, rep.initial_condition)
    ok = worst_res <= 1e-6 and worst_ratio <= 1.0 and worst_ic <= 1e-8
    return ok, (f"residual {worst_res:.2e} <= 1e-6, max ||x||/(1.05 bound) {worst_ratio:.3f} <= 1, "
                f"||P(1)x(1)|| {worst_ic:.1e} <= 1e-8")


def criterion_4():
    sc = scenario("counterexample")
    norms = constant_norm(1)
    summary = admissibility_probe(sc.family, sc.projection, norms, grid=time_grid(1e3, 64), bound_factor=2.0)
    bg = fit_bounded_growth(sc.family, norms)
    code = cli_main(["certify", "--scenario", "counterexample"])
    ok = summary.admissible and summary.worst_ratio <= 2.0 and not bg.passed and code == 2
    return ok, (f"admissible={summary.admissible}, worst ||x||/||y||_L {summary.worst_ratio:.4f} <= 2, "
                f"bounded growth passed={bg.passed}, certify exit {code}")


def criterion_5():
    sc = scenario("nonuniform_contraction", lam=2.0, eps=0.5)
    norms = lyapunov_norm(sc.family, sc.projection, lam=2.0)
    eq = check_norm_equivalence(norms)
    cert = fit_dichotomy(sc.family, norms, sc.projection)
    ok = 0.35 <= eq.eps <= 0.65 and cert.passed and cert.D <= 1.1
    return ok, f"fitted eps {eq.eps:.3f} in [0.35, 0.65], Lyapunov fit passed={cert.passed}, D {cert.D:.4f} <= 1.1"


def criterion_6():
    sc = scenario("scalar_contraction", lam=1.0)
    norms = constant_norm(1)
    B = scalar_perturbation(1, 1.0)
    rows = robustness_experiment(sc.family, sc.projection, norms, B, [0.01, 0.05, 0.1, 2.0])
    lam_err = max(abs(r.lambda_stable - (1 - r.c)) for r in rows[:3])
    bg = fit_bounded_growth(sc.family, norms)
    gron = True
    gap = 0.0
    for c in (0.01, 0.05, 0.1):
        Bc = B.scaled(c)
        Ug = perturbed_family(sc.family, Bc, method="generator")
        Up = perturbed_family(sc.family, Bc, method="picard")
        gron &= gronwall_growth_check(Up, norms, bg.M, bg.a, c, norms.C)["passed"]
        ts = np.logspace(0, 3, 25)
        i, j = np.triu_indices(len(ts))
        gap = max(gap, float(np.max(np.abs(Ug(ts[j], ts[i]) - Up(ts[j], ts[i])))))
    ok = lam_err <= 0.02 and gron and all(r.passed for r in rows[:3]) and not rows[3].passed and gap <= 1e-7
    return ok, (f"max |lambda - (1-c)| {lam_err:.1e} <= 0.02, Gronwall {gron}, c=2 fails={not rows[3].passed}, "
                f"generator vs Picard {gap:.1e} <= 1e-7")


def criterion_7():
    rng = np.random.default_rng(0)
    defect = 0.0
    worst_ratio = np.inf
    for name in ("scalar_contraction", "scalar_expansion", "diag_dichotomy", "rotated_dichotomy",
                 "nonuniform_contraction"):
        sc = scenario(name)
        d = sc.family.dim
        g = time_grid(1e3, 64)
        y1 = GridFunction(g, rng.standard_normal((len(g), d)))
        y2 = GridFunction(g, rng.standard_normal((len(g), d)))
        a, b = rng.uniform(-3, 3, 2)
        x1, _ = green_solve(sc.family, sc.projection, y1)
        x2, _ = green_solve(sc.family, sc.projection, y2)
        x, _ = green_solve(sc.family, sc.projection, a * y1 + b * y2)
        defect = max(defect, float(np.max(np.abs(x.values - a * x1.values - b * x2.values))))
        res = []
        for dens, step in ((64, 0.25), (128, 0.125)):
            g = time_grid(1e3, dens, step)
            y = GridFunction(g, np.column_stack([np.cos(np.log(g)) + 1 / g] * d))
            x, _ = green_solve(sc.family, sc.projection, y)
            res.append(verify_solution(sc.family, x, y))
        worst_ratio = min(worst_ratio, res[0] / res[1])
    ok = defect <= 1e-9 and worst_ratio >= 3.0
    return ok, f"linearity defect {defect:.1e} <= 1e-9, min refinement ratio {worst_ratio:.1f} >= 3"


def criterion_8():
    worst = -np.inf
    cases = 0
    for name, params in (("diag_dichotomy", {}), ("diag_dichotomy", {"ds": 2, "du": 1}),
                         ("rotated_dichotomy", {"theta": 0.3}), ("rotated_dichotomy", {"theta": 1.2})):
        sc = scenario(name, **params)
        d = sc.family.dim
        projs = [sc.projection, splitting_projection(sc.family, constant_norm(d))]
        for proj in projs:
            for norms in (constant_norm(d), lyapunov_norm(sc.family, proj, lam=0.9)):
                pb = projection_norm_bound(proj, norms)
                for row in pb["per_tau"]:
                    worst = max(worst, row["P_norm"] - row["bound"])
                cases += 1
    ok = worst <= 1e-6
    return ok, f"max ||P(tau)|| - 2/gamma(tau) = {worst:.3f} <= 1e-6 over {cases} splitting/norm cases"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8]


@pytest.mark.parametrize("n", range(1, 9))
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n - 1]()
    with capsys.disabled():
        _report(n, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    results = [_report(i + 1, *f()) for i, f in enumerate(CRITERIA)]
    print(f"{sum(results)}/{len(results)} criteria pass")
