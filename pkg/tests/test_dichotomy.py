import csv
import json

import numpy as np
import pytest

from polydich.dichotomy import (ProjectionFamily, certify, default_pairs, fit_bounded_growth, fit_dichotomy,
                                growth_exponent, projection_from_bases, projection_norm_bound,
                                projections_from_splitting, restricted_inverse, splitting_projection,
                                stable_subspace, unstable_subspace_from_Z)
from polydich.errors import (AmbiguousSplitError, NonComplementaryError, RankCollapseError,
                             SingularRestrictionError)
from polydich.evolution import EvolutionFamily, rotation, scenario
from polydich.norms import constant_norm, lyapunov_norm


def _angle(a, b):
    """Principal angle between two 1-d subspaces given by unit vectors."""
    return float(np.arccos(min(1.0, abs(float(a.ravel() @ b.ravel())))))


# --- projections -----------------------------------------------------------


def test_reference_projection_invariants(diag):
    rep = diag.projection.check(diag.family, np.logspace(0, 3, 9))
    assert rep["passed"]
    assert rep["intertwining"] <= 1e-12


def test_non_intertwining_projection_fails(diag):
    R = rotation(0.4)
    bad = ProjectionFamily.constant(R @ np.diag([1.0, 0.0]) @ R.T)
    rep = bad.check(diag.family, np.logspace(0, 2, 5))
    assert not rep["passed"] and rep["intertwining"] > 0.1


def test_restricted_inverse_diag(diag):
    for t, tau in [(1.0, 5.0), (2.0, 30.0), (7.0, 7.0)]:
        got = restricted_inverse(diag.family, diag.projection, t, tau)[0]
        np.testing.assert_allclose(got, np.diag([0.0, t / tau]), atol=1e-14)


def test_restricted_inverse_singular():
    cex = scenario("counterexample")
    with pytest.raises(SingularRestrictionError):
        restricted_inverse(cex.family, ProjectionFamily.zero(1), 3.0, 5.0)


def test_growth_exponent():
    ts = np.logspace(0, 2, 30)
    assert growth_exponent(ts**-1.5, ts, 1.0) == pytest.approx(-1.5)
    assert growth_exponent(np.zeros(30), ts, 1.0) == -np.inf


# --- splitting -------------------------------------------------------------


def test_stable_subspace_diag(diag, euclid2):
    S = stable_subspace(diag.family, euclid2, 1.0)
    assert S.shape == (2, 1)
    assert _angle(S, np.array([1.0, 0.0])) <= 1e-12


def test_stable_subspace_expansion(euclid1):
    S = stable_subspace(scenario("scalar_expansion").family, euclid1, 1.0)
    assert S.shape == (1, 0)


def test_stable_subspace_rotated(euclid2):
    R = rotation(0.7)
    S = stable_subspace(scenario("rotated_dichotomy", lam=1.0, theta=0.7).family, euclid2, 1.0)
    assert _angle(S, R @ [1.0, 0.0]) <= 1e-6


def test_stable_subspace_dead_zone(euclid1):
    with pytest.raises(AmbiguousSplitError):
        stable_subspace(scenario("no_decay").family, euclid1, 1.0)


def test_stable_subspace_needs_long_horizon(diag, euclid2):
    with pytest.raises(ValueError):
        stable_subspace(diag.family, euclid2, 2.0, horizon=20.0)


def test_unstable_from_Z(diag):
    U = unstable_subspace_from_Z(diag.family, [[0.0], [1.0]], 4.0)
    assert _angle(U, np.array([0.0, 1.0])) <= 1e-14
    assert unstable_subspace_from_Z(diag.family, np.zeros((2, 0)), 4.0).shape == (2, 0)
    R = rotation(0.2)
    rot = scenario("rotated_dichotomy", lam=1.0, theta=0.2).family
    U = unstable_subspace_from_Z(rot, (R @ [0.0, 1.0])[:, None], 9.0)
    assert _angle(U, R @ [0.0, 1.0]) <= 1e-6


def test_rank_collapse_on_counterexample():
    with pytest.raises(RankCollapseError):
        unstable_subspace_from_Z(scenario("counterexample").family, [[1.0]], 3.0)


def test_projection_from_oblique_bases():
    th = np.pi / 6
    P = projection_from_bases(np.array([[1.0], [0.0]]), np.array([[np.cos(th)], [np.sin(th)]]))
    np.testing.assert_allclose(P @ P, P, atol=1e-14)
    np.testing.assert_allclose(P @ [1.0, 0.0], [1.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(P @ [np.cos(th), np.sin(th)], [0.0, 0.0], atol=1e-14)


def test_non_complementary():
    with pytest.raises(NonComplementaryError):
        projection_from_bases(np.array([[1.0], [0.0]]), np.array([[1.0], [1e-12]]))
    with pytest.raises(NonComplementaryError):
        projection_from_bases(np.zeros((1, 0)), np.zeros((1, 0)))


def test_splitting_trivial_cases(diag):
    proj = projections_from_splitting(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]))
    np.testing.assert_allclose(proj(17.0), np.diag([1.0, 0.0]))
    one = projections_from_splitting(np.eye(1), np.zeros((1, 0)))
    np.testing.assert_allclose(one(3.0), np.eye(1))


def test_splitting_reproduces_reference(diag, euclid2):
    proj = splitting_projection(diag.family, euclid2)
    for tau in np.logspace(0, 3, 7):
        assert np.linalg.norm(proj(tau) - diag.projection(tau), 2) <= 1e-6


def test_splitting_rotated(euclid2):
    th = 1.1
    sc = scenario("rotated_dichotomy", lam=1.0, theta=th)
    proj = splitting_projection(sc.family, euclid2)
    R = rotation(th)
    for tau in (1.0, 10.0, 300.0):
        assert np.linalg.norm(proj(tau) - R @ np.diag([1.0, 0.0]) @ R.T, 2) <= 1e-6


# --- certificates ------------------------------------------------------------


def test_fit_scalar_contraction(contraction, euclid1):
    cert = fit_dichotomy(contraction.family, euclid1, contraction.projection)
    assert cert.passed
    assert 0.95 <= cert.lambda_stable <= 1.05
    assert 1.0 - 1e-12 <= cert.D <= 1.1
    assert cert.lambda_unstable is None


def test_fit_diag_constant_norm(diag, euclid2):
    cert = fit_dichotomy(diag.family, euclid2, diag.projection)
    assert cert.passed
    assert 0.95 <= cert.lambda_stable <= 1.05 and 0.95 <= cert.lambda_unstable <= 1.05
    assert 1.0 - 1e-12 <= cert.D <= 1.2


def test_fit_diag_lyapunov_norm(diag):
    norms = lyapunov_norm(diag.family, diag.projection, lam=1.0)
    cert = fit_dichotomy(diag.family, norms, diag.projection)
    assert cert.passed and cert.D <= 1 + 1e-6


def test_fit_counterexample_fails(euclid1):
    cex = scenario("counterexample")
    cert = fit_dichotomy(cex.family, euclid1, cex.projection)
    assert not cert.passed
    growth = [r for r in cert.residuals if r["log_growth"] != "-inf" and r["t"] - r["tau"] == 1.0]
    assert max(r["log_growth"] for r in growth) >= np.log(8.0) - 1e-12


def test_nonuniform_needs_its_lyapunov_norm():
    sc = scenario("nonuniform_contraction", lam=2.0, eps=0.5)
    assert not fit_dichotomy(sc.family, constant_norm(1), sc.projection).passed
    norms = lyapunov_norm(sc.family, sc.projection, lam=2.0)
    cert = fit_dichotomy(sc.family, norms, sc.projection)
    assert cert.passed and cert.D <= 1.1


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_scale_invariance(contraction, euclid1, c):
    base = contraction.family
    scaled = EvolutionFamily(1, lambda t, tau: c * base(t, tau), "closed-form")
    a = fit_dichotomy(base, euclid1, contraction.projection)
    b = fit_dichotomy(scaled, euclid1, contraction.projection)
    assert b.lambda_stable == pytest.approx(a.lambda_stable, abs=1e-9)
    assert b.D == pytest.approx(c * a.D, rel=1e-9)


def test_more_samples_never_rescue_a_failure(euclid1):
    cex = scenario("counterexample")
    small = default_pairs(1e3, 8, 8)
    big = default_pairs(1e3, 24, 24) + small
    assert not fit_dichotomy(cex.family, euclid1, cex.projection, small).passed
    assert not fit_dichotomy(cex.family, euclid1, cex.projection, big).passed


def test_bounded_growth_expansion(euclid1):
    bg = fit_bounded_growth(scenario("scalar_expansion").family, euclid1)
    assert bg.passed
    assert bg.M == pytest.approx(1.0, abs=1e-9) and bg.a == pytest.approx(1.0, abs=1e-9)


def test_bounded_growth_diag(diag, euclid2):
    bg = fit_bounded_growth(diag.family, euclid2)
    assert bg.passed and 0.95 <= bg.a <= 1.05


def test_bounded_growth_counterexample_fails(euclid1):
    bg = fit_bounded_growth(scenario("counterexample").family, euclid1)
    assert not bg.passed and bg.reasons


def test_projection_bound_orthogonal(diag, euclid2):
    pb = projection_norm_bound(diag.projection, euclid2)
    assert pb["gamma_min"] == pytest.approx(np.sqrt(2.0), rel=1e-9)
    assert pb["sup_P"] == pytest.approx(1.0, rel=1e-12)
    assert pb["passed"]


def test_projection_bound_trivial(euclid1):
    pb = projection_norm_bound(ProjectionFamily.identity(1), euclid1)
    assert pb["gamma_min"] == float("inf") and pb["passed"]


def test_projection_bound_oblique(euclid2):
    th = np.pi / 6
    P = projection_from_bases(np.array([[1.0], [0.0]]), np.array([[np.cos(th)], [np.sin(th)]]))
    pb = projection_norm_bound(ProjectionFamily.constant(P), euclid2)
    # unit vectors in two lines: the closest pair is e1 and the direction at angle theta
    assert pb["gamma_min"] == pytest.approx(2 * np.sin(th / 2), rel=1e-9)
    assert pb["sup_P"] == pytest.approx(1 / np.sin(th), rel=1e-6)
    assert pb["passed"]


def test_certify_and_exports(diag, euclid2, tmp_path):
    cert = certify(diag.family, euclid2, diag.projection, seed=3)
    assert cert.passed and cert.bounded_growth["passed"]
    assert cert.gamma_min == pytest.approx(np.sqrt(2.0))
    again = certify(diag.family, euclid2, diag.projection, seed=3)
    assert cert.to_json() == again.to_json()
    doc = json.loads(cert.to_json())
    assert doc["seed"] == 3
    path = tmp_path / "cloud.csv"
    cert.write_point_cloud(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["part", "t", "tau", "log_ratio", "log_growth"]
    assert len(rows) - 1 == len(cert.residuals)


def test_certify_counterexample_fails(euclid1):
    cex = scenario("counterexample")
    assert not certify(cex.family, euclid1, cex.projection).passed


def test_default_pairs_shape():
    pairs = default_pairs(1e3)
    assert len(pairs) == 24 * 24 + 24
    assert all(t >= tau >= 1.0 for t, tau in pairs)
