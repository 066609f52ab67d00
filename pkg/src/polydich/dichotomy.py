"""Dichotomy projections, growth-based splittings and fitted certificates."""

from __future__ import annotations

import csv
import json
import threading
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import AmbiguousSplitError, NonComplementaryError, RankCollapseError
from .evolution import EvolutionFamily, operator_norm
from .fitting import binned_upper_curvature, ls_slope, upper_envelope

# ---------------------------------------------------------------------------
# projection families


class ProjectionFamily:
    """Idempotents P(t) of constant rank, with Q(t) = Id - P(t)."""

    def __init__(self, dim: int, evaluator: Callable[[np.ndarray], np.ndarray], rank: int, tag: str,
                 meta: dict | None = None):
        self.dim = int(dim)
        self.rank = int(rank)
        self.tag = tag
        self.meta = dict(meta or {})
        self._evaluator = evaluator

    def __repr__(self):
        return f"ProjectionFamily(dim={self.dim}, rank={self.rank}, tag={self.tag!r})"

    @classmethod
    def constant(cls, P, tag: str = "user") -> "ProjectionFamily":
        P = np.array(P, dtype=float)
        d = P.shape[0]
        rank = int(round(np.trace(P)))

        def evaluator(ts):
            return np.broadcast_to(P, (len(ts), d, d)).copy()

        return cls(d, evaluator, rank, tag)

    @classmethod
    def identity(cls, dim: int) -> "ProjectionFamily":
        return cls.constant(np.eye(dim), "user")

    @classmethod
    def zero(cls, dim: int) -> "ProjectionFamily":
        return cls.constant(np.zeros((dim, dim)), "user")

    def __call__(self, t) -> np.ndarray:
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = self._evaluator(t_arr.ravel()).reshape(t_arr.shape + (self.dim, self.dim))
        return out[0] if np.ndim(t) == 0 else out

    def complement(self, t) -> np.ndarray:
        return np.eye(self.dim) - self(t)

    def kernel_basis(self, t) -> np.ndarray:
        """Orthonormal basis of Ker P(t) = Im Q(t); shape (..., d, d - rank)."""
        Q = self.complement(t)
        m = self.dim - self.rank
        if m == 0:
            return np.zeros(Q.shape[:-1] + (0,))
        U, _, _ = np.linalg.svd(Q)
        return U[..., :m]

    def range_basis(self, t) -> np.ndarray:
        P = self(t)
        if self.rank == 0:
            return np.zeros(P.shape[:-1] + (0,))
        U, _, _ = np.linalg.svd(P)
        return U[..., : self.rank]

    def check(self, family: EvolutionFamily, times, tol: float = 1e-8) -> dict:
        """Idempotence, intertwining P(t)T(t,tau) = T(t,tau)P(tau) and rank at sampled times."""
        ts = np.asarray(times, dtype=float)
        P = self(ts)
        idem = float(operator_norm(P @ P - P).max())
        ranks = np.linalg.matrix_rank(P, tol=1e-8) if self.rank else np.zeros(len(ts), int)
        i, j = np.triu_indices(len(ts))
        T = family(ts[j], ts[i])
        inter = float(operator_norm(P[j] @ T - T @ P[i]).max())
        return {
            "idempotence": idem,
            "intertwining": inter,
            "rank_constant": bool(np.all(np.asarray(ranks) == self.rank)),
            "passed": idem <= 1e-9 and inter <= tol and bool(np.all(np.asarray(ranks) == self.rank)),
        }


def restricted_inverse(family: EvolutionFamily, proj: ProjectionFamily, t, tau) -> np.ndarray:
    """Matrix of T(t,tau) Q(tau) for t <= tau via the inverse of T(tau,t) on Ker P(t).

    Works on broadcast arrays of times.  Raises SingularRestrictionError when
    the restriction is numerically rank deficient.
    """
    from .errors import SingularRestrictionError

    t = np.atleast_1d(np.asarray(t, dtype=float))
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    t, tau = np.broadcast_arrays(t, tau)
    d = family.dim
    m = d - proj.rank
    if m == 0:
        return np.zeros(t.shape + (d, d))
    K = proj.kernel_basis(t)  # (n, d, m)
    M = family(tau, t) @ K  # (n, d, m)
    sv = np.linalg.svd(M, compute_uv=False)
    if np.any(sv[..., -1] <= 1e-13 * np.maximum(sv[..., 0], 1e-300)):
        raise SingularRestrictionError("restriction of T to Ker P is numerically singular")
    return K @ np.linalg.pinv(M) @ proj.complement(tau)


# ---------------------------------------------------------------------------
# growth-based splitting


def growth_exponent(values, times, base: float) -> float:
    """LS slope of log(values) against log(times/base); -inf when the orbit dies."""
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    alive = values > 0
    if alive.sum() < max(3, len(values) // 2):
        return -np.inf
    return ls_slope(np.log(times[alive] / base), np.log(values[alive]))[0]


def stable_subspace(family: EvolutionFamily, norms, tau: float, horizon: float | None = None,
                    threshold: float = 0.0, margin: float = 0.05, density: int = 32) -> np.ndarray:
    """Orthonormal basis of directions whose orbits decay from time ``tau``.

    Each right singular vector v of T(horizon, tau) is classified by the fitted
    exponent of t -> ||T(t,tau)v||_t; exponents below ``-threshold`` are stable.
    """
    if horizon is None:
        horizon = 100.0 * tau
    if horizon / tau < 100.0 * (1 - 1e-12):
        raise ValueError("stable_subspace needs horizon/tau >= 100")
    d = family.dim
    ts = tau * np.logspace(0, np.log10(horizon / tau), int(density * np.log10(horizon / tau)) + 1)
    _, _, Vt = np.linalg.svd(family(horizon, tau))
    orbits = family(ts, tau)  # (n, d, d)
    stable = []
    for v in Vt:
        vals = norms.paired(ts, orbits @ v)
        ex = growth_exponent(vals, ts, tau)
        if abs(ex - (-threshold)) < margin and np.isfinite(ex):
            raise AmbiguousSplitError(f"growth exponent {ex:.4f} within dead zone at tau={tau}")
        if ex < -threshold:
            stable.append(v)
    if not stable:
        return np.zeros((d, 0))
    Q, _ = np.linalg.qr(np.array(stable).T)
    return Q


def unstable_subspace_from_Z(family: EvolutionFamily, Z, tau: float) -> np.ndarray:
    """Orthonormal basis of T(tau, 1) Z."""
    Z = np.asarray(Z, dtype=float).reshape(family.dim, -1)
    if Z.shape[1] == 0:
        return np.zeros((family.dim, 0))
    img = family(tau, 1.0) @ Z
    U, s, _ = np.linalg.svd(img, full_matrices=False)
    if s[-1] <= 1e-10 * max(s[0], 1e-300) or s[0] == 0.0:
        raise RankCollapseError(f"T(tau,1)Z is rank deficient at tau={tau}")
    return U


def _as_basis_fn(b):
    if callable(b):
        return b
    if isinstance(b, dict):
        keys = np.array(sorted(b))

        def fn(t):
            return b[float(keys[np.argmin(np.abs(keys - t))])]

        return fn
    arr = np.asarray(b, dtype=float)
    return lambda t: arr


def projection_from_bases(S: np.ndarray, U: np.ndarray, cond_cap: float = 1e8) -> np.ndarray:
    d = S.shape[0]
    if S.shape[1] + U.shape[1] != d:
        raise NonComplementaryError(f"dim S + dim U = {S.shape[1] + U.shape[1]} != {d}")
    B = np.hstack([S, U])
    if np.linalg.cond(B) > cond_cap:
        raise NonComplementaryError("stable and unstable bases are nearly dependent")
    Dg = np.diag(np.r_[np.ones(S.shape[1]), np.zeros(U.shape[1])])
    return B @ Dg @ np.linalg.inv(B)


def projections_from_splitting(S_basis, U_basis, dim: int | None = None,
                               cond_cap: float = 1e8) -> ProjectionFamily:
    """P(tau) = projection onto S(tau) along U(tau).

    ``S_basis``/``U_basis`` may be callables tau -> (d, k) arrays, dicts keyed
    by tau, or fixed arrays.
    """
    s_fn = _as_basis_fn(S_basis)
    u_fn = _as_basis_fn(U_basis)
    S1 = np.asarray(s_fn(1.0))
    d = dim or S1.shape[0]
    rank = S1.shape[1]
    projection_from_bases(S1, np.asarray(u_fn(1.0)), cond_cap)
    cache: dict[float, np.ndarray] = {}
    lock = threading.Lock()

    def evaluator(ts):
        out = np.empty((len(ts), d, d))
        for i, t in enumerate(ts):
            key = float(t)
            P = cache.get(key)
            if P is None:
                P = projection_from_bases(np.asarray(s_fn(key)), np.asarray(u_fn(key)), cond_cap)
                with lock:
                    if len(cache) < 200_000:
                        cache[key] = P
            out[i] = P
        return out

    return ProjectionFamily(d, evaluator, rank, "computed-from-Z")


def default_Z(family: EvolutionFamily, norms, horizon: float | None = None, **kw) -> np.ndarray:
    """Orthogonal complement of S(1): the expanding directions at time 1."""
    S = stable_subspace(family, norms, 1.0, horizon, **kw)
    d = family.dim
    if S.shape[1] == d:
        return np.zeros((d, 0))
    U, _, _ = np.linalg.svd(S if S.shape[1] else np.zeros((d, 1)))
    return U[:, S.shape[1]:]


def splitting_projection(family: EvolutionFamily, norms, Z=None, horizon_factor: float = 100.0,
                         cond_cap: float = 1e8, **kw) -> ProjectionFamily:
    """Projection family from S(tau) (decaying directions) and U(tau) = T(tau,1)Z.

    The stable dimension is classified once at tau = 1 by exponent fitting.
    At other times S(tau) is the span of the right singular vectors of
    T(horizon_factor * tau, tau) with the smallest singular values, which is the
    subspace the exponent test selects when the split is clean.
    """
    d = family.dim
    S1 = stable_subspace(family, norms, 1.0, horizon_factor, **kw)
    r = S1.shape[1]
    if Z is None:
        Z = default_Z(family, norms, horizon_factor, **kw)
    Z = np.asarray(Z, dtype=float).reshape(d, -1)

    def s_fn(tau):
        if tau == 1.0:
            return S1
        if r == 0:
            return np.zeros((d, 0))
        if r == d:
            return np.eye(d)
        _, _, Vt = np.linalg.svd(family(horizon_factor * tau, tau))
        return Vt[d - r:].T

    def u_fn(tau):
        return unstable_subspace_from_Z(family, Z, tau)

    proj = projections_from_splitting(s_fn, u_fn, d, cond_cap)
    proj.meta["Z"] = Z
    return proj


# ---------------------------------------------------------------------------
# certificates


@dataclass
class DichotomyCertificate:
    lambda_stable: float | None
    lambda_unstable: float | None
    D: float
    drift_stable: float | None
    drift_unstable: float | None
    projection_bound: float | None
    gamma_min: float | None
    passed: bool
    reasons: list[str] = field(default_factory=list)
    bounded_growth: dict | None = None
    residuals: list[dict] = field(default_factory=list)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, **kw)

    def write_point_cloud(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["part", "t", "tau", "log_ratio", "log_growth"])
            for r in self.residuals:
                w.writerow([r["part"], repr(r["t"]), repr(r["tau"]), repr(r["log_ratio"]), repr(r["log_growth"])])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v) or np.isinf(v):
            return str(v)
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def default_pairs(tmax: float = 1e3, n_tau: int = 24, n_ratio: int = 24, unit_shifts: bool = True):
    """(t, tau) pairs with t >= tau: log-spaced tau in [1, tmax/100] times ratios in [1, 100].

    Unit shifts (tau + 1, tau) are included because the inequalities must also
    hold at short range, where the discrete counterexample family misbehaves.
    """
    taus = np.logspace(0, np.log10(max(tmax / 100.0, 1.0 + 1e-9)), n_tau)
    ratios = np.logspace(0, 2, n_ratio)
    T, R = np.meshgrid(taus, ratios, indexing="ij")
    pairs = [(float(t * r), float(t)) for t, r in zip(T.ravel(), R.ravel())]
    if unit_shifts:
        pairs += [(float(t + 1.0), float(t)) for t in taus]
    return pairs


def _candidates(rng, d, n_random, extra):
    X = rng.standard_normal((n_random, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return np.vstack([X] + [e for e in extra if e.size])


def _max_ratio(norms, op: np.ndarray, t_out: float, t_in: float, X: np.ndarray) -> float:
    """max over rows x of ||op x||_{t_out} / ||x||_{t_in}."""
    den = norms.paired(np.full(len(X), t_in), X)
    ok = den > 0
    if not ok.any():
        return 0.0
    num = norms.paired(np.full(ok.sum(), t_out), X[ok] @ op.T)
    return float(np.max(num / den[ok]))


def _part_fit(points, drift_tol, label):
    """Fit one inequality: LS exponent, envelope constant, drift of the constant in the base time."""
    if not points:
        return None, 1.0, None, []
    lr = np.array([p[0] for p in points])  # log(t/tau) >= 0
    rr = np.array([p[1] for p in points])
    base = np.array([p[2] for p in points])
    live = rr > 0
    reasons = []
    if live.sum() == 0:
        return np.inf, 0.0, 0.0, reasons
    y = np.log(rr[live])
    slope, _ = ls_slope(lr[live], y)
    lam = -slope
    D = float(np.exp(np.max(y + lam * lr[live])))
    # the constant must not depend on the base time: upper-envelope slope in log(base)
    drift, _ = upper_envelope(np.log(base[live]), y + lam * lr[live])
    if not lam > 0:
        reasons.append(f"{label}: fitted exponent {lam:.4g} is not positive")
    if drift > drift_tol:
        reasons.append(f"{label}: constant drifts like base^{drift:.3g}")
    return lam, D, drift, reasons


def fit_dichotomy(family: EvolutionFamily, norms, proj: ProjectionFamily, pairs=None,
                  n_vectors: int = 8, seed: int = 0, drift_tol: float = 0.05) -> DichotomyCertificate:
    """Fit (lambda, D) in ||T(t,tau)P(tau)x||_t <= D (t/tau)^-lambda ||x||_tau and its unstable twin.

    For each pair the ratio is maximised over random unit vectors, their
    projections and the top right singular vector of the operator.  lambda is
    the least-squares slope of log-ratio against log(t/tau) (zero ratios
    dropped), D the envelope maximum.  The certificate also rejects constants
    that grow with the initial time, which a polynomial dichotomy forbids.
    """
    if pairs is None:
        pairs = default_pairs()
    rng = np.random.default_rng(seed)
    d = family.dim
    st_pts, un_pts, table = [], [], []
    for t_big, t_small in pairs:
        if t_big < t_small:
            t_big, t_small = t_small, t_big
        # stable: forward from t_small to t_big
        if proj.rank > 0:
            P = proj(t_small)
            op = family(t_big, t_small) @ P
            vt = np.linalg.svd(op)[2][:1]
            X = _candidates(rng, d, n_vectors, [vt, proj.range_basis(t_small).T])
            X = np.vstack([X, X @ P.T])
            r = _max_ratio(norms, op, t_big, t_small, X)
            lr = float(np.log(t_big / t_small))
            st_pts.append((lr, r, t_small))
            table.append({"part": "stable", "t": t_big, "tau": t_small, "log_ratio": lr,
                          "log_growth": float(np.log(r)) if r > 0 else "-inf"})
        # unstable: backward from t_big to t_small on Ker P
        if proj.rank < d:
            op = restricted_inverse(family, proj, t_small, t_big)[0]
            Q = proj.complement(t_big)
            vt = np.linalg.svd(op)[2][:1]
            X = _candidates(rng, d, n_vectors, [vt, proj.kernel_basis(t_big).T])
            X = np.vstack([X, X @ Q.T])
            r = _max_ratio(norms, op, t_small, t_big, X)
            lr = float(np.log(t_big / t_small))
            un_pts.append((lr, r, t_big))
            table.append({"part": "unstable", "t": t_small, "tau": t_big, "log_ratio": lr,
                          "log_growth": float(np.log(r)) if r > 0 else "-inf"})
    lam_s, D_s, drift_s, rs = _part_fit(st_pts, drift_tol, "stable")
    lam_u, D_u, drift_u, ru = _part_fit(un_pts, drift_tol, "unstable")
    reasons = rs + ru
    D = max(D_s if st_pts else 0.0, D_u if un_pts else 0.0)
    return DichotomyCertificate(
        lambda_stable=lam_s, lambda_unstable=lam_u, D=D, drift_stable=drift_s, drift_unstable=drift_u,
        projection_bound=None, gamma_min=None, passed=not reasons, reasons=reasons,
        residuals=table, seed=seed,
    )


@dataclass
class BoundedGrowth:
    M: float
    a: float
    drift: float
    curvature: float
    passed: bool
    reasons: list[str] = field(default_factory=list)


def fit_bounded_growth(family: EvolutionFamily, norms, pairs=None, n_vectors: int = 8, seed: int = 0,
                       drift_tol: float = 0.05, curvature_tol: float = 0.2) -> BoundedGrowth:
    """Envelope ||T(t,s)x||_t <= M (t/s)^a ||x||_s, or a failure verdict.

    a is the least-squares slope of the per-pair log growth (clamped at 0 since
    decay is covered by a = 0), M the envelope maximum.  Failure when M grows
    with s or the upper envelope bends upward faster than a power law.
    """
    if pairs is None:
        pairs = default_pairs()
    rng = np.random.default_rng(seed)
    d = family.dim
    lr, rr, base = [], [], []
    for t, s in pairs:
        if t < s:
            t, s = s, t
        op = family(t, s)
        vt = np.linalg.svd(op)[2][:1]
        X = _candidates(rng, d, n_vectors, [vt, np.eye(d)])
        lr.append(np.log(t / s))
        rr.append(_max_ratio(norms, op, t, s, X))
        base.append(s)
    lr, rr, base = map(np.asarray, (lr, rr, base))
    live = rr > 0
    if not live.any():
        return BoundedGrowth(0.0, 0.0, 0.0, 0.0, True)
    y = np.log(rr[live])
    a = max(ls_slope(lr[live], y)[0], 0.0)
    M = float(np.exp(np.max(y - a * lr[live])))
    drift, _ = upper_envelope(np.log(base[live]), y - a * lr[live])
    curv = binned_upper_curvature(lr[live], y)
    reasons = []
    if drift > drift_tol:
        reasons.append(f"constant M drifts like s^{drift:.3g}")
    if curv > curvature_tol:
        reasons.append(f"growth envelope curvature {curv:.3g} exceeds {curvature_tol}")
    return BoundedGrowth(M, a, float(drift), curv, not reasons, reasons)


def projection_norm_bound(proj: ProjectionFamily, norms, taus=None, n_samples: int = 64,
                          seed: int = 0, tol: float = 1e-6) -> dict:
    """Sampled sup ||P(tau)||, minimal angle gamma and the check ||P|| <= 2/gamma.

    gamma(tau) is the minimum of ||v_s + v_u||_tau over sampled pairs of
    ||.||_tau-unit vectors from Ran P(tau) and Ker P(tau), always including the
    pairs (Px/||Px||, Qx/||Qx||) generated by the vectors used for ||P||.
    """
    if taus is None:
        taus = np.logspace(0, 3, 13)
    d = proj.dim
    rng = np.random.default_rng(seed)
    if proj.rank in (0, d):
        return {"sup_P": 1.0 if proj.rank else 0.0, "gamma_min": float("inf"), "bound": 0.0,
                "passed": True, "per_tau": []}
    per_tau = []
    passed = True
    for tau in np.atleast_1d(taus):
        tau = float(tau)
        P = proj(tau)
        Q = np.eye(d) - P
        X = rng.standard_normal((n_samples, d))
        X = np.vstack([X, np.linalg.svd(P)[2][:1]])
        nt = np.full(len(X), tau)
        nx = norms.paired(nt, X)
        Px, Qx = X @ P.T, X @ Q.T
        nP, nQ = norms.paired(nt, Px), norms.paired(nt, Qx)
        ok = (nP > 0) & (nQ > 0)
        p_norm = float(np.max(nP / nx))
        Sb, Ub = proj.range_basis(tau), proj.kernel_basis(tau)
        vs = rng.standard_normal((n_samples, Sb.shape[1])) @ Sb.T
        vu = rng.standard_normal((n_samples, Ub.shape[1])) @ Ub.T
        vs = np.vstack([vs, Px[ok]])
        vu = np.vstack([vu, Qx[ok]])
        vs /= norms.paired(np.full(len(vs), tau), vs)[:, None]
        vu /= norms.paired(np.full(len(vu), tau), vu)[:, None]
        cands = np.vstack([vs + vu, vs - vu])
        gamma = float(np.min(norms.paired(np.full(len(cands), tau), cands)))
        ok_tau = p_norm <= 2.0 / gamma + tol
        passed &= ok_tau
        per_tau.append({"tau": tau, "P_norm": p_norm, "gamma": gamma, "bound": 2.0 / gamma, "passed": ok_tau})
    sup_p = max(r["P_norm"] for r in per_tau)
    gmin = min(r["gamma"] for r in per_tau)
    return {"sup_P": sup_p, "gamma_min": gmin, "bound": 2.0 / gmin, "passed": bool(passed), "per_tau": per_tau}


def certify(family: EvolutionFamily, norms, proj: ProjectionFamily, pairs=None, seed: int = 0,
            bounded_growth: bool = True) -> DichotomyCertificate:
    """fit_dichotomy + projection bound + (optionally) bounded growth in one certificate."""
    cert = fit_dichotomy(family, norms, proj, pairs, seed=seed)
    pb = projection_norm_bound(proj, norms, seed=seed)
    cert.projection_bound = pb["sup_P"]
    cert.gamma_min = pb["gamma_min"]
    if not pb["passed"] or not pb["gamma_min"] > 0:
        cert.reasons.append("projection norm exceeds 2/gamma")
    if bounded_growth:
        bg = fit_bounded_growth(family, norms, pairs, seed=seed)
        cert.bounded_growth = asdict(bg)
        if not bg.passed:
            cert.reasons.extend(bg.reasons)
    cert.passed = not cert.reasons
    return cert
