"""Perturbations B(t) with ||B(t)|| <= c / t^(1+eps) and their effect on a dichotomy.

The perturbed family solves

    U(t,tau) = T(t,tau) + int_tau^t T(t,s) B(s) U(s,tau) ds.

With a generator at hand this is just x' = (A + B)x.  Otherwise the integral
equation is solved cell by cell on a log grid: on each short cell [a, b] the
one-step propagator U(., a) is found by Picard iteration on a Gauss collocation
of the equation in log-time, and propagators across cells are chained.
"""

from __future__ import annotations

import csv
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .admissibility import GridFunction, green_solve, sliding_L1_norm, sup_norm, verify_solution
from .dichotomy import (ProjectionFamily, _candidates, certify, default_pairs, splitting_projection,
                        stable_subspace)
from .errors import AmbiguousSplitError, NonComplementaryError, PicardConvergenceError, RankCollapseError
from .evolution import EvolutionFamily, from_generator, operator_norm
from .norms import log_grid


class PerturbationFamily:
    """B(t) as a vectorised evaluator ``ts -> (n, d, d)`` with declared (c, eps)."""

    def __init__(self, dim: int, evaluator: Callable[[np.ndarray], np.ndarray], c: float, eps: float = 0.0,
                 name: str = "custom"):
        if c < 0 or eps < 0:
            raise ValueError("c and eps must be non-negative")
        self.dim = int(dim)
        self.c = float(c)
        self.eps = float(eps)
        self.name = name
        self._evaluator = evaluator

    def __repr__(self):
        return f"PerturbationFamily({self.name!r}, dim={self.dim}, c={self.c}, eps={self.eps})"

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = self._evaluator(t.ravel())
        return np.asarray(out, dtype=float).reshape(t.shape + (self.dim, self.dim))

    def scaled(self, c: float) -> "PerturbationFamily":
        """Same shape, rescaled so the declared constant becomes ``c``."""
        if c == self.c:
            return self
        if self.c == 0:
            raise ValueError("cannot rescale a perturbation declared with c = 0")
        k = c / self.c
        ev = self._evaluator
        return PerturbationFamily(self.dim, lambda ts: k * ev(ts), c, self.eps, self.name)


def scalar_perturbation(dim: int, c: float, eps: float = 0.0, matrix=None) -> PerturbationFamily:
    """B(t) = c / t^(1+eps) * K with ||K|| = 1 (identity by default)."""
    K = np.eye(dim) if matrix is None else np.asarray(matrix, dtype=float)
    nK = float(np.linalg.norm(K, 2))
    if nK == 0:
        raise ValueError("shape matrix must be nonzero")
    K = K / nK

    def ev(ts):
        return (c / ts ** (1.0 + eps))[:, None, None] * K

    return PerturbationFamily(dim, ev, c, eps, "scalar")


def zero_perturbation(dim: int) -> PerturbationFamily:
    return PerturbationFamily(dim, lambda ts: np.zeros((len(ts), dim, dim)), 0.0, 0.0, "zero")


def check_perturbation_bound(B: PerturbationFamily, ts=None) -> dict:
    """max over sampled t of ||B(t)|| t^(1+eps); passes iff it does not exceed c."""
    if ts is None:
        ts = np.logspace(0, 4, 161)
    ts = np.asarray(ts, dtype=float)
    vals = operator_norm(B(ts)) * ts ** (1.0 + B.eps)
    m = float(np.max(vals)) if vals.size else 0.0
    return {"max": m, "c": B.c, "eps": B.eps, "passed": bool(m <= B.c * (1 + 1e-12) + 1e-15)}


# ---------------------------------------------------------------------------
# Picard construction


class _CellSolver:
    """U(b, a) for a <= b inside one grid cell, by collocation at m Gauss nodes in log-time.

    Collocation unknowns are W_k = U(s_k, a).  The integral up to s_k uses a
    second m-point rule on [a, s_k] whose values of U come from Lagrange
    interpolation through a and the nodes.
    """

    def __init__(self, family: EvolutionFamily, B: PerturbationFamily, m: int = 8, tol: float = 1e-13,
                 max_iter: int = 200):
        self.T = family
        self.B = B
        self.m = m
        self.tol = tol
        self.max_iter = max_iter
        xi, wi = np.polynomial.legendre.leggauss(m)
        self.x = 0.5 * (1.0 + xi)  # nodes on [0, 1]
        self.w = 0.5 * wi
        # sub-rule on [0, x_k]: points x_k * x_j, weights x_k * w_j
        sub = self.x[:, None] * self.x[None, :]
        ref = np.concatenate([[0.0], self.x])
        self.L = np.stack([_lagrange(ref, sub[k]) for k in range(m)])  # (m, m, m+1)
        self.sub = sub
        self.iterations = 0

    def solve(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d = self.T.dim
        ua = np.log(a)
        h = np.log(b) - ua
        s = np.exp(ua[:, None] + h[:, None] * self.x[None, :])  # (n, m)
        sig = np.exp(ua[:, None, None] + h[:, None, None] * self.sub[None])  # (n, m, m)
        # kernels in d(log s): T(target, sigma) * sigma * B(sigma)
        Bs = self.B(sig) * sig[..., None, None]
        Ksub = self.T(np.broadcast_to(s[:, :, None], sig.shape), sig) @ Bs  # (n, m, m, d, d)
        wsub = (h[:, None] * self.x[None, :])[:, :, None] * self.w[None, None, :]  # (n, m, m)
        T0 = self.T(s, np.broadcast_to(a[:, None], s.shape))  # (n, m, d, d)
        # effective linear map W -> integral, W stacked with W(a) = I at index 0
        A = np.einsum("nkj,nkjab,kjl->nklab", wsub, Ksub, self.L)  # (n, m, m+1, d, d)
        rhs = T0 + A[:, :, 0]
        A = A[:, :, 1:]
        W = T0.copy()
        for it in range(self.max_iter):
            W_new = rhs + np.einsum("nklab,nlbc->nkac", A, W)
            delta = np.max(np.abs(W_new - W)) if W.size else 0.0
            W = W_new
            if delta <= self.tol * max(1.0, float(np.max(np.abs(W)))):
                break
        else:
            raise PicardConvergenceError(f"Picard iteration did not settle in {self.max_iter} sweeps")
        self.iterations = max(self.iterations, it + 1)
        # endpoint
        Bn = self.B(s) * s[..., None, None]
        Kend = self.T(np.broadcast_to(b[:, None], s.shape), s) @ Bn
        out = self.T(b, a) + np.einsum("nk,nkab,nkbc->nac", h[:, None] * self.w[None, :], Kend, W)
        out[h == 0] = np.eye(d)
        return out


def _lagrange(nodes: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Matrix L with L[i, j] = ell_j(pts[i]) for the Lagrange basis on ``nodes``."""
    L = np.ones((len(pts), len(nodes)))
    for j, xj in enumerate(nodes):
        for k, xk in enumerate(nodes):
            if k != j:
                L[:, j] *= (pts - xk) / (xj - xk)
    return L


class _PicardFamily:
    def __init__(self, family, B, breakpoints, m):
        self.cell = _CellSolver(family, B, m)
        self.g = np.asarray(breakpoints, dtype=float)
        self.steps = self.cell.solve(self.g[:-1], self.g[1:]) if len(self.g) > 1 else np.zeros((0,))
        self._mid: dict[tuple[int, int], np.ndarray] = {}
        self._lock = threading.Lock()
        self.d = family.dim

    def middle(self, i: int, j: int) -> np.ndarray:
        """U(g_j, g_i) for i <= j."""
        if i >= j:
            return np.eye(self.d)
        key = (i, j)
        hit = self._mid.get(key)
        if hit is not None:
            return hit
        prev = self._mid.get((i, j - 1))
        if prev is None:
            prev = np.eye(self.d)
            for k in range(i, j - 1):
                prev = self.steps[k] @ prev
        out = self.steps[j - 1] @ prev
        with self._lock:
            self._mid[key] = out
        return out

    def __call__(self, t, tau):
        g = self.g
        if t.max() > g[-1] * (1 + 1e-12):
            raise ValueError(f"perturbed family built up to t = {g[-1]}; requested {t.max()}")
        # i: first breakpoint >= tau, j: last breakpoint <= t
        i = np.searchsorted(g, tau, side="left")
        j = np.searchsorted(g, t, side="right") - 1
        within = j < i
        out = np.empty((len(t), self.d, self.d))
        if np.any(within):
            out[within] = self.cell.solve(tau[within], t[within])
        cross = ~within
        if np.any(cross):
            head = self.cell.solve(tau[cross], g[i[cross]])
            tail = self.cell.solve(g[j[cross]], t[cross])
            ii, jj = i[cross], j[cross]
            mids = np.empty_like(head)
            for k, (a, b) in enumerate(zip(ii, jj)):
                mids[k] = self.middle(int(a), int(b))
            out[cross] = tail @ mids @ head
        return out


def perturbed_family(family: EvolutionFamily, B: PerturbationFamily, method: str = "auto",
                     tmax: float = 1e4, density: int = 32, order: int = 8,
                     check_pairs=None) -> EvolutionFamily:
    """Evolution family U of the perturbed equation.

    ``method`` is ``"generator"`` (integrate A + B), ``"picard"`` (integral
    equation on a log grid with ``density`` cells per decade up to ``tmax``) or
    ``"auto"`` (generator when the family has one).  The integral-identity
    residual on sampled pairs is stored in ``meta["identity_residual"]``.
    """
    if B.dim != family.dim:
        raise ValueError("perturbation and family dimensions differ")
    if method not in ("auto", "generator", "picard"):
        raise ValueError(f"unknown method {method!r}")
    use_gen = method == "generator" or (method == "auto" and family.generator is not None)
    meta = {"name": f"{family.meta.get('name', 'family')}+B", "base": family.meta.get("name"),
            "c": B.c, "eps": B.eps}
    if use_gen:
        if family.generator is None:
            raise ValueError("generator route needs a family with a generator")
        A = family.generator

        def AB(t):
            return np.asarray(A(t), dtype=float) + B(np.array([t]))[0]

        U = from_generator(AB, family.dim, meta=meta)
        U.meta["route"] = "generator"
    else:
        g = log_grid(1.0, tmax, density)
        if family.kind == "discrete-product":
            g = np.union1d(g, np.arange(1.0, np.floor(tmax) + 1.0))
        g = np.union1d(g, [tmax])
        U = EvolutionFamily(family.dim, _PicardFamily(family, B, g, order), "generator", meta=meta)
        U.meta.update(route="picard", tmax=float(tmax), density=density)
    U.kind = "perturbed"
    U.meta["identity_residual"] = integral_identity_residual(family, U, B, check_pairs)
    return U


def integral_identity_residual(family: EvolutionFamily, U: EvolutionFamily, B: PerturbationFamily,
                               pairs=None, panels_per_decade: int = 64, order: int = 6) -> float:
    """max ||U(t,tau) - T(t,tau) - int_tau^t T(t,s)B(s)U(s,tau) ds|| / (1 + ||U(t,tau)||).

    The integral is a composite Gauss rule in log-time, split at integers for
    discrete-product families.
    """
    if pairs is None:
        pairs = [(2.0, 1.0), (10.0, 1.0), (100.0, 1.0), (50.0, 5.0), (300.0, 30.0), (1000.0, 100.0)]
    tmax = U.meta.get("tmax", np.inf)
    xi, wi = np.polynomial.legendre.leggauss(order)
    worst = 0.0
    for t, tau in pairs:
        if t > tmax:
            continue
        n_pan = max(1, int(np.ceil(panels_per_decade * np.log10(t / tau))))
        edges = np.exp(np.linspace(np.log(tau), np.log(t), n_pan + 1))
        if family.kind == "discrete-product":
            ints = np.arange(np.ceil(tau), np.floor(t) + 1.0)
            edges = np.union1d(edges, ints[(ints > tau) & (ints < t)])
        ue = np.log(edges)
        du = np.diff(ue)
        nodes = np.exp(ue[:-1, None] + 0.5 * (1 + xi)[None, :] * du[:, None]).ravel()
        w = (0.5 * du[:, None] * wi[None, :]).ravel()
        integrand = family(np.full(nodes.shape, t), nodes) @ (B(nodes) * nodes[:, None, None]) @ U(nodes, tau)
        Ut = U(t, tau)
        res = Ut - family(t, tau) - np.einsum("k,kab->ab", w, integrand)
        worst = max(worst, float(np.linalg.norm(res, 2) / (1.0 + np.linalg.norm(Ut, 2))))
    return worst


# ---------------------------------------------------------------------------
# estimates from the robustness argument


def apply_D(B: PerturbationFamily, x: GridFunction) -> GridFunction:
    """(Dx)(t) = t B(t) x(t) on the grid of x."""
    t = x.grid
    return GridFunction(t, np.einsum("nab,nb->na", B(t) * t[:, None, None], x.values))


def check_operator_D_estimate(B: PerturbationFamily, norms, battery) -> dict:
    """max over the battery of ||Dx||_L / ||x||_inf against the bound cC."""
    if norms.C is None:
        raise ValueError("norm family has no declared constant C")
    if isinstance(battery, dict):
        battery = list(battery.values())
    bound = B.c * norms.C
    worst = 0.0
    rows = []
    for x in battery:
        dl = sliding_L1_norm(apply_D(B, x), norms)
        xi = sup_norm(x, norms)
        ratio = dl / xi if xi > 0 else 0.0
        rows.append({"Dx_L": dl, "x_inf": xi, "ratio": ratio})
        worst = max(worst, ratio)
    return {"max_ratio": worst, "bound": bound, "passed": bool(worst <= bound * (1 + 1e-9) + 1e-15),
            "rows": rows}


def gronwall_growth_check(U: EvolutionFamily, norms, M: float, a: float, c: float, C: float,
                          pairs=None, n_vectors: int = 8, seed: int = 0, tol: float = 1e-6) -> dict:
    """Check ||U(t,tau)x||_t <= M (t/tau)^(a + cCM) ||x||_tau (1 + tol) on samples."""
    if pairs is None:
        pairs = default_pairs(tmax=min(1e3, U.meta.get("tmax", 1e3)))
    rng = np.random.default_rng(seed)
    d = U.dim
    expo = a + c * C * M
    worst = 0.0
    for t, tau in pairs:
        if t < tau:
            t, tau = tau, t
        op = U(t, tau)
        vt = np.linalg.svd(op)[2][:1]
        X = _candidates(rng, d, n_vectors, [vt, np.eye(d)])
        num = norms.paired(np.full(len(X), t), X @ op.T)
        den = norms.paired(np.full(len(X), tau), X)
        worst = max(worst, float(np.max(num / den)) / (M * (t / tau) ** expo))
    return {"exponent": expo, "max_ratio": worst, "passed": bool(worst <= 1.0 + tol)}


def check_green_identity(T: EvolutionFamily, U: EvolutionFamily, proj_U: ProjectionFamily,
                         B: PerturbationFamily, y: GridFunction, norms=None) -> float:
    """Residual of the U-Green solution x under the T-equation with forcing y + Dx."""
    x, _ = green_solve(U, proj_U, y, norms)
    return verify_solution(T, x, y + apply_D(B, x))


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepRow:
    c: float
    lambda_stable: float | None
    lambda_unstable: float | None
    D: float | None
    passed: bool
    reasons: list[str] = field(default_factory=list)
    identity_residual: float | None = None
    certificate: dict | None = None


def _split_for(U, norms, Z):
    d = U.dim
    if Z.shape[1] == 0:
        S = stable_subspace(U, norms, 1.0)
        if S.shape[1] != d:
            raise NonComplementaryError(f"stable space has dimension {S.shape[1]} but Z is empty")
        return ProjectionFamily.identity(d)
    return splitting_projection(U, norms, Z=Z)


def robustness_experiment(family: EvolutionFamily, proj: ProjectionFamily, norms, B: PerturbationFamily,
                          c_grid, method: str = "auto", pairs=None, seed: int = 0,
                          workers: int = 1) -> list[SweepRow]:
    """Perturb by B rescaled to each c, rebuild the splitting with Z = Ker P(1), and re-certify."""
    c_grid = [float(c) for c in c_grid]
    if not c_grid:
        raise ValueError("c grid is empty")
    Z = proj.kernel_basis(1.0)
    tmax = 1e3 if pairs is None else max(max(p) for p in pairs)

    def run(c):
        if c == 0:
            U, P = family, proj
            ident = 0.0
        else:
            U = perturbed_family(family, B.scaled(c), method=method, tmax=max(1e4, 100 * tmax))
            ident = U.meta["identity_residual"]
            try:
                P = _split_for(U, norms, Z)
            except (NonComplementaryError, AmbiguousSplitError, RankCollapseError) as exc:
                return SweepRow(c, None, None, None, False, [f"splitting: {exc}"], ident)
        cert = certify(U, norms, P, pairs, seed=seed)
        return SweepRow(c, cert.lambda_stable, cert.lambda_unstable, cert.D, cert.passed, list(cert.reasons),
                        ident, cert.to_dict())

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(run, c_grid))
    return [run(c) for c in c_grid]


def write_sweep_csv(rows: list[SweepRow], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "lambda_stable", "lambda_unstable", "D", "verdict"])
        for r in rows:
            w.writerow([repr(r.c), "" if r.lambda_stable is None else repr(r.lambda_stable),
                        "" if r.lambda_unstable is None else repr(r.lambda_unstable),
                        "" if r.D is None else repr(r.D), "pass" if r.passed else "fail"])


def sweep_to_dict(rows: list[SweepRow], with_certificates: bool = False) -> list[dict]:
    out = []
    for r in rows:
        doc = asdict(r)
        if not with_certificates:
            doc.pop("certificate")
        out.append(doc)
    return out
