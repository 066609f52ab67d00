import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polydich.dichotomy import ProjectionFamily
from polydich.errors import UnboundedSupremumError
from polydich.evolution import scenario
from polydich.norms import (check_norm_equivalence, constant_norm, log_grid, lyapunov_norm, norm_from_json,
                            strong_lyapunov_norm)


@pytest.fixture(scope="module")
def nonuniform():
    return scenario("nonuniform_contraction", lam=2.0, eps=0.5)


@pytest.fixture(scope="module")
def nonuniform_norm(nonuniform):
    return lyapunov_norm(nonuniform.family, nonuniform.projection, lam=2.0)


@pytest.fixture(scope="module")
def diag_norm(diag):
    return lyapunov_norm(diag.family, diag.projection, lam=1.0)


def test_constant_norm_values():
    n = constant_norm(2)
    assert n(7.0, [1.0, 0.0]) == 1.0
    assert n(1.0, [0.0, 0.0]) == 0.0
    assert n(100.0, [3.0, 4.0]) == 5.0
    assert (n.C, n.eps) == (1.0, 0.0)
    with pytest.raises(ValueError):
        constant_norm(0)


def test_log_grid_is_anchored():
    g = log_grid(1.0, 100.0, 4)
    np.testing.assert_allclose(g, 10 ** (np.arange(9) / 4))


def test_contraction_lyapunov_norm_is_euclidean(contraction):
    n = lyapunov_norm(contraction.family, contraction.projection, lam=1.0, horizon=1e3)
    for tau in (1.0, 3.7, 50.0):
        assert n(tau, [2.5]) == pytest.approx(2.5, rel=1e-14)


def test_diag_lyapunov_norm_axes(diag_norm):
    assert diag_norm(5.0, [1.0, 0.0]) == pytest.approx(1.0, rel=1e-14)
    assert diag_norm(5.0, [0.0, 1.0]) == pytest.approx(1.0, rel=1e-14)
    # mixed vector: the two suprema add
    assert diag_norm(5.0, [3.0, 4.0]) == pytest.approx(7.0, rel=1e-14)


def test_nonuniform_norm_against_dense_sup(nonuniform, nonuniform_norm):
    tau = float(np.exp(3.0))  # a(tau) = 1
    ts = tau * np.logspace(0, np.log10(1e4 / tau), 20001)
    dense = np.max(nonuniform.family(ts, tau)[:, 0, 0] * (ts / tau) ** 2)
    got = nonuniform_norm(tau, [1.0])
    assert got >= 1.0
    assert got <= dense * (1 + 1e-12)
    assert got >= dense * (1 - 1e-3)


def test_strong_norm_third_term(diag):
    n = strong_lyapunov_norm(diag.family, diag.projection, lam=1.0, b=1.0)
    assert n(5.0, [0.0, 1.0]) == pytest.approx(2.0, rel=1e-14)
    assert n(5.0, [1.0, 0.0]) == pytest.approx(1.0, rel=1e-14)


def test_strong_norm_equals_two_term_for_contraction(nonuniform, nonuniform_norm):
    strong = strong_lyapunov_norm(nonuniform.family, nonuniform.projection, lam=2.0, b=1.0)
    for tau in (1.0, 4.0, 20.0, 300.0):
        assert strong(tau, [1.3]) == nonuniform_norm(tau, [1.3])
    with pytest.raises(ValueError):
        strong_lyapunov_norm(nonuniform.family, nonuniform.projection, lam=2.0, b=0.0)


def test_lambda_too_large_raises(contraction):
    n = lyapunov_norm(contraction.family, contraction.projection, lam=2.0, horizon=1e3)
    with pytest.raises(UnboundedSupremumError):
        n(2.0, [1.0])


def test_default_lambda_is_shrunk_fit(diag):
    n = lyapunov_norm(diag.family, diag.projection)
    assert n.descriptor["lambda"] == pytest.approx(0.9, abs=0.01)


def test_contraction_with_constant_one(nonuniform, nonuniform_norm, rng):
    g = log_grid(1.0, 1e3, 64)
    lam = 2.0
    worst = 0.0
    for tau in rng.choice(g[g < 300], 10):
        tau = float(tau * rng.uniform(1.0, 1.03))
        for t in g[g >= tau][::16]:
            x = rng.standard_normal(1)
            lhs = nonuniform_norm(t, nonuniform.family(t, tau) @ x)
            rhs = (t / tau) ** -lam * nonuniform_norm(tau, x)
            worst = max(worst, lhs / rhs)
    assert worst <= 1 + 1e-6


def test_lower_bound_and_projection_split(diag_norm, rng):
    for tau in np.logspace(0, 3, 7):
        X = rng.standard_normal((20, 2))
        vals = diag_norm(tau, X)
        assert np.all(np.linalg.norm(X, axis=1) <= vals * (1 + 1e-12))


def test_json_descriptor_roundtrip(diag, diag_norm):
    doc = diag_norm.to_json()
    again = norm_from_json(doc, diag.family, diag.projection)
    assert again(7.0, [0.3, -0.2]) == diag_norm(7.0, [0.3, -0.2])
    assert norm_from_json({"kind": "constant", "dim": 2})(1.0, [3.0, 4.0]) == 5.0
    with pytest.raises(ValueError):
        norm_from_json({"kind": "mystery"}, diag.family, diag.projection)


def test_custom_norm_not_serialisable():
    from polydich.norms import NormFamily

    n = NormFamily(1, lambda t, X: np.abs(X[:, 0]), "custom")
    with pytest.raises(TypeError):
        n.to_json()


def test_equivalence_constant():
    rep = check_norm_equivalence(constant_norm(3))
    assert rep.C == pytest.approx(1.0, abs=1e-12)
    assert rep.eps == pytest.approx(0.0, abs=1e-12)
    assert rep.max_violation <= 1e-15
    with pytest.raises(ValueError):
        check_norm_equivalence(constant_norm(1), samples=0)


def test_equivalence_uniform_lyapunov(diag_norm):
    rep = check_norm_equivalence(diag_norm)
    assert abs(rep.eps) <= 0.05
    assert rep.max_violation <= 1e-12


def test_equivalence_nonuniform(nonuniform_norm):
    rep = check_norm_equivalence(nonuniform_norm)
    assert 0.35 <= rep.eps <= 0.65
    assert rep.max_violation <= 1e-12


def test_strong_norm_constant_near_reference(nonuniform):
    strong = strong_lyapunov_norm(nonuniform.family, nonuniform.projection, lam=2.0)
    rep = check_norm_equivalence(strong)
    two_d = 2 * nonuniform.reference["D"]
    assert two_d / 2 <= rep.C <= two_d * 2


def test_wrong_projection_is_detected(diag):
    # projecting onto the expanding axis makes the forward supremum blow up
    n = lyapunov_norm(diag.family, ProjectionFamily.constant(np.diag([0.0, 1.0])), lam=1.0)
    with pytest.raises(UnboundedSupremumError):
        n(3.0, [0.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(-1e3, 1e3, allow_subnormal=False), tau=st.floats(1.0, 1e3),
       x=st.lists(st.floats(-10, 10, allow_subnormal=False), min_size=2, max_size=2))
def test_homogeneity(diag_norm, alpha, tau, x):
    x = np.array(x)
    assert diag_norm(tau, alpha * x) == pytest.approx(abs(alpha) * diag_norm(tau, x), rel=1e-12, abs=1e-300)


@settings(max_examples=30, deadline=None)
@given(tau=st.floats(1.0, 1e3), x=st.lists(st.floats(-10, 10, allow_subnormal=False), min_size=4, max_size=4))
def test_triangle_inequality(diag_norm, tau, x):
    a, b = np.array(x[:2]), np.array(x[2:])
    assert diag_norm(tau, a + b) <= diag_norm(tau, a) + diag_norm(tau, b) + 1e-12
