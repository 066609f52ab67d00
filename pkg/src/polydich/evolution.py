"""Evolution families T(t, tau) on [1, inf) acting on R^d.

A family is stored as a vectorised evaluator ``(t, tau) -> (n, d, d)``.  Four
kinds exist: closed-form scenarios, generator families obtained by integrating
X' = A(t) X, discrete products of per-cell matrices, and perturbed families
(see :mod:`polydich.robustness`).
"""

from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, IntegrationError, UnknownScenarioError

KINDS = ("closed-form", "generator", "discrete-product", "perturbed")

Generator = Callable[[float], np.ndarray]


class EvolutionFamily:
    """Two-parameter family of d x d matrices T(t, tau), t >= tau >= 1.

    ``evaluator`` receives flat float arrays ``t`` and ``tau`` of equal length
    and returns an array of shape ``(n, d, d)``.  It never sees invalid input;
    domain checks happen in :meth:`evaluate`.
    """

    def __init__(
        self,
        dim: int,
        evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray],
        kind: str,
        generator: Generator | None = None,
        integrator: dict | None = None,
        meta: dict | None = None,
    ):
        if dim < 1:
            raise ValueError("dimension must be positive")
        if kind not in KINDS:
            raise ValueError(f"unknown kind {kind!r}")
        self.dim = int(dim)
        self.kind = kind
        self.generator = generator
        self.integrator = integrator
        self.meta = dict(meta or {})
        self._evaluator = evaluator

    def __repr__(self):
        name = self.meta.get("name", "anonymous")
        return f"EvolutionFamily({name!r}, dim={self.dim}, kind={self.kind!r})"

    def evaluate(self, t, tau) -> np.ndarray:
        """Return T(t, tau).  Scalars give a (d, d) matrix; arrays broadcast."""
        t_arr, tau_arr = np.broadcast_arrays(
            np.asarray(t, dtype=float), np.asarray(tau, dtype=float)
        )
        shape = t_arr.shape
        t_flat = t_arr.ravel()
        tau_flat = tau_arr.ravel()
        if t_flat.size and (np.any(tau_flat < 1.0 - 1e-12) or np.any(t_flat < tau_flat * (1.0 - 1e-13))):
            raise DomainError("evolution family requires 1 <= tau <= t")
        tau_flat = np.maximum(tau_flat, 1.0)
        t_flat = np.maximum(t_flat, tau_flat)
        if t_flat.size == 0:
            return np.zeros(shape + (self.dim, self.dim))
        out = self._evaluator(t_flat, tau_flat)
        return out.reshape(shape + (self.dim, self.dim))

    __call__ = evaluate


def operator_norm(m: np.ndarray) -> np.ndarray:
    """Largest singular value over the trailing two axes."""
    m = np.asarray(m, dtype=float)
    if m.shape[-1] == 0 or m.shape[-2] == 0:
        return np.zeros(m.shape[:-2])
    return np.linalg.norm(m, ord=2, axis=(-2, -1))


# ---------------------------------------------------------------------------
# generator families


class _SegmentCache:
    """Fundamental solutions on the dyadic checkpoints [2^k, 2^(k+1)].

    Each segment stores the dense-output solution E_k(s) = T(s, 2^k) and the
    transfer matrix S_k = T(2^(k+1), 2^k).  T(t, s) is then
    E(t) S_{k(t)-1} ... S_{k(s)} E(s)^{-1}; E is only inverted inside one
    factor-2 window, where it is well conditioned.
    """

    def __init__(self, A: Generator, dim: int, rtol: float, atol: float, method: str):
        self.A = A
        self.dim = dim
        self.rtol = rtol
        self.atol = atol
        self.method = method
        self._sols: list = []
        self._transfer: list[np.ndarray] = []
        self._mid: dict[tuple[int, int], np.ndarray] = {}
        self._lock = threading.Lock()

    def _rhs(self, t, y):
        d = self.dim
        return (np.asarray(self.A(t), dtype=float).reshape(d, d) @ y.reshape(d, d)).ravel()

    def ensure(self, k_max: int):
        if k_max < len(self._sols):
            return
        with self._lock:
            d = self.dim
            while len(self._sols) <= k_max:
                k = len(self._sols)
                a, b = 2.0**k, 2.0 ** (k + 1)
                res = solve_ivp(
                    self._rhs,
                    (a, b),
                    np.eye(d).ravel(),
                    method=self.method,
                    rtol=self.rtol,
                    atol=self.atol,
                    dense_output=True,
                )
                if not res.success:
                    raise IntegrationError(f"segment [{a}, {b}]: {res.message}")
                self._transfer.append(res.y[:, -1].reshape(d, d))
                self._sols.append(res.sol)

    def local(self, s: np.ndarray, k: np.ndarray) -> np.ndarray:
        """E(s) = T(s, 2^k) for each s with its segment index k."""
        d = self.dim
        out = np.empty((s.size, d, d))
        for kk in np.unique(k):
            mask = k == kk
            vals = self._sols[int(kk)](s[mask])
            out[mask] = vals.T.reshape(-1, d, d)
        return out

    def middle(self, kt: int, ks: int) -> np.ndarray:
        key = (kt, ks)
        m = self._mid.get(key)
        if m is None:
            m = np.eye(self.dim)
            for k in range(ks, kt):
                m = self._transfer[k] @ m
            self._mid[key] = m
        return m


def _segment_index(s: np.ndarray) -> np.ndarray:
    k = np.floor(np.log2(s)).astype(int)
    # guard against log2 rounding just below an exact power of two
    k = np.where(2.0 ** (k + 1) <= s, k + 1, k)
    return np.maximum(k, 0)


def from_generator(
    A: Generator,
    dim: int,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    method: str = "DOP853",
    meta: dict | None = None,
) -> EvolutionFamily:
    """Evolution family of x' = A(t) x, integrated with an adaptive embedded pair."""
    cache = _SegmentCache(A, dim, rtol, atol, method)

    def evaluator(t, tau):
        kt = _segment_index(t)
        ks = _segment_index(tau)
        cache.ensure(int(max(kt.max(), ks.max())))
        Et = cache.local(t, kt)
        Es = cache.local(tau, ks)
        Es_inv = np.linalg.inv(Es)
        out = np.empty_like(Et)
        pairs = np.stack([kt, ks], axis=1)
        for kt_i, ks_i in np.unique(pairs, axis=0):
            mask = (kt == kt_i) & (ks == ks_i)
            mid = cache.middle(int(kt_i), int(ks_i))
            out[mask] = Et[mask] @ mid @ Es_inv[mask]
        return out

    fam = EvolutionFamily(
        dim,
        evaluator,
        "generator",
        generator=A,
        integrator={"method": method, "rtol": rtol, "atol": atol, "checkpoints": "2^k"},
        meta=meta,
    )
    fam._segments = cache
    return fam


def interpolated_generator(times: np.ndarray, entries: np.ndarray) -> Generator:
    """Piecewise-linear A(t) from samples; entries has shape (n, d, d)."""
    times = np.asarray(times, dtype=float)
    entries = np.asarray(entries, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("generator sample times must be strictly increasing")
    d = entries.shape[-1]
    flat = entries.reshape(len(times), d * d)

    def A(t):
        return np.array([np.interp(t, times, flat[:, j]) for j in range(d * d)]).reshape(d, d)

    return A


def load_generator_csv(path, **integrator) -> EvolutionFamily:
    """Read rows ``t, A11, A12, ..., Add`` (row-major) and integrate."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                continue  # header
    data = np.array(rows)
    d = math.isqrt(data.shape[1] - 1)
    if d * d != data.shape[1] - 1:
        raise ValueError("generator CSV needs 1 + d*d columns")
    A = interpolated_generator(data[:, 0], data[:, 1:].reshape(-1, d, d))
    return from_generator(A, d, meta={"name": "csv", "source": str(path)}, **integrator)


# ---------------------------------------------------------------------------
# cocycle and continuity checks


@dataclass
class CocycleReport:
    max_residual: float
    worst_triple: tuple[float, float, float] | None
    tol: float
    passed: bool
    n_triples: int


def check_cocycle(family: EvolutionFamily, grid, tol: float) -> CocycleReport:
    """Max of ||T(t,s)T(s,tau) - T(t,tau)|| over all triples t >= s >= tau of ``grid``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = np.asarray(grid, dtype=float)
    if np.any(np.diff(g) < 0) or g[0] < 1:
        raise ValueError("grid must be sorted with all points >= 1")
    i, j, k = np.array(
        [(a, b, c) for a in range(len(g)) for b in range(a, len(g)) for c in range(b, len(g))]
    ).T
    tau, s, t = g[i], g[j], g[k]
    lhs = family(t, s) @ family(s, tau)
    res = operator_norm(lhs - family(t, tau))
    worst = int(np.argmax(res))
    mx = float(res[worst])
    return CocycleReport(mx, (float(t[worst]), float(s[worst]), float(tau[worst])), tol, mx <= tol, len(res))


def max_jump(family: EvolutionFamily, tau: float, grid) -> float:
    """Largest ||T(t_{k+1}, tau) - T(t_k, tau)|| between consecutive grid points."""
    g = np.asarray(grid, dtype=float)
    g = g[g >= tau]
    vals = family(g, tau)
    return float(operator_norm(np.diff(vals, axis=0)).max()) if len(g) > 1 else 0.0


# ---------------------------------------------------------------------------
# scenario library


@dataclass
class ScenarioSpec:
    name: str
    params: dict[str, float] = field(default_factory=dict)
    description: str = ""

    @classmethod
    def from_json(cls, doc: str | dict) -> "ScenarioSpec":
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls(doc["name"], dict(doc.get("params", {})), doc.get("description", ""))

    def to_json(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}


@dataclass
class Scenario:
    spec: ScenarioSpec
    family: EvolutionFamily
    projection: Any = None  # ProjectionFamily, when an exact one is known
    reference: dict = field(default_factory=dict)


_ALIASES = {"lambda": "lam", "epsilon": "eps", "d_s": "ds", "d_u": "du"}


def _power_family(name, lam, sign, dim=1):
    # sign=-1: (tau/t)^lam, sign=+1: (t/tau)^lam
    def evaluator(t, tau):
        v = np.exp(sign * lam * (np.log(t) - np.log(tau)))
        return v[:, None, None] * np.eye(dim)

    def A(t):
        return sign * lam / t * np.eye(dim)

    return EvolutionFamily(dim, evaluator, "closed-form", generator=A, meta={"name": name, "lambda": lam})


def scalar_contraction(lam: float = 1.0) -> Scenario:
    """T(t,tau) = (tau/t)^lam, from x' = -lam x / t."""
    fam = _power_family("scalar_contraction", lam, -1.0)
    return Scenario(ScenarioSpec("scalar_contraction", {"lambda": lam}), fam, _const_projection(np.eye(1), "exact"),
                    {"lambda": lam, "D": 1.0, "M": 1.0, "a": 0.0})


def scalar_expansion(lam: float = 1.0) -> Scenario:
    """T(t,tau) = (t/tau)^lam, from x' = lam x / t."""
    fam = _power_family("scalar_expansion", lam, 1.0)
    return Scenario(ScenarioSpec("scalar_expansion", {"lambda": lam}), fam, _const_projection(np.zeros((1, 1)), "exact"),
                    {"lambda": lam, "D": 1.0, "M": 1.0, "a": lam})


def _diag_parts(lam, ds, du):
    signs = np.concatenate([-np.ones(ds), np.ones(du)])

    def evaluator(t, tau):
        logr = np.log(t) - np.log(tau)
        diag = np.exp(lam * np.outer(logr, signs))
        out = np.zeros((len(t), ds + du, ds + du))
        idx = np.arange(ds + du)
        out[:, idx, idx] = diag
        return out

    def A(t):
        return np.diag(signs * lam / t)

    return evaluator, A


def diag_dichotomy(lam: float = 1.0, ds: int = 1, du: int = 1) -> Scenario:
    """Block diagonal of ds contracting and du expanding power laws, P = diag(Id, 0)."""
    ds, du = int(ds), int(du)
    ev, A = _diag_parts(lam, ds, du)
    d = ds + du
    fam = EvolutionFamily(d, ev, "closed-form", generator=A, meta={"name": "diag_dichotomy", "lambda": lam})
    P = np.diag(np.concatenate([np.ones(ds), np.zeros(du)]))
    return Scenario(ScenarioSpec("diag_dichotomy", {"lambda": lam, "ds": ds, "du": du}), fam,
                    _const_projection(P, "exact"), {"lambda": lam, "D": 1.0, "M": 1.0, "a": lam})


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotated_dichotomy(lam: float = 1.0, theta: float = 0.5) -> Scenario:
    """diag_dichotomy(lam, 1, 1) conjugated by a fixed rotation R(theta)."""
    R = rotation(theta)
    ev, A0 = _diag_parts(lam, 1, 1)

    def evaluator(t, tau):
        return R @ ev(t, tau) @ R.T

    def A(t):
        return R @ A0(t) @ R.T

    fam = EvolutionFamily(2, evaluator, "closed-form", generator=A,
                          meta={"name": "rotated_dichotomy", "lambda": lam, "theta": theta})
    P = R @ np.diag([1.0, 0.0]) @ R.T
    return Scenario(ScenarioSpec("rotated_dichotomy", {"lambda": lam, "theta": theta}), fam,
                    _const_projection(P, "exact"), {"lambda": lam, "D": 1.0, "M": 1.0, "a": lam})


def _osc(t):
    return np.sin(0.5 * np.pi * np.log(t)) ** 2


def nonuniform_contraction(lam: float = 2.0, eps: float = 0.5) -> Scenario:
    """T(t,tau) = (tau/t)^lam g(tau)/g(t) with g(t) = t^(eps sin^2((pi/2) ln t))."""

    def log_g(t):
        return eps * _osc(t) * np.log(t)

    def evaluator(t, tau):
        v = np.exp(lam * (np.log(tau) - np.log(t)) + log_g(tau) - log_g(t))
        return v[:, None, None]

    def A(t):
        lt = math.log(t)
        dlog_g = eps * (0.5 * math.pi * math.sin(math.pi * lt) * lt + math.sin(0.5 * math.pi * lt) ** 2) / t
        return np.array([[-lam / t - dlog_g]])

    fam = EvolutionFamily(1, evaluator, "closed-form", generator=A,
                          meta={"name": "nonuniform_contraction", "lambda": lam, "epsilon": eps})
    return Scenario(ScenarioSpec("nonuniform_contraction", {"lambda": lam, "epsilon": eps}), fam,
                    _const_projection(np.eye(1), "exact"), {"lambda": lam, "epsilon": eps, "D": 1.0})


def counterexample_factor(n) -> np.ndarray:
    """A_n = n when n = 2^l with l >= 1, else 0."""
    n = np.asarray(n, dtype=np.int64)
    is_pow = (n >= 2) & ((n & (n - 1)) == 0)
    return np.where(is_pow, n, 0).astype(float)


def counterexample() -> Scenario:
    """Discrete-product scalar family T(t,tau) = A_{floor t - 1} ... A_{floor tau}."""

    def evaluator(t, tau):
        ft = np.floor(t).astype(np.int64)
        fs = np.floor(tau).astype(np.int64)
        out = np.ones(len(t))
        gap = ft - fs
        one = gap == 1
        out[one] = counterexample_factor(fs[one])
        # two consecutive integers are never both powers of two >= 2, so any
        # product of two or more factors contains a zero
        out[gap >= 2] = 0.0
        return out[:, None, None]

    fam = EvolutionFamily(1, evaluator, "discrete-product", meta={"name": "counterexample"})
    return Scenario(ScenarioSpec("counterexample", {}), fam, _const_projection(np.eye(1), "exact"),
                    {"green_bound": 2.0})


def no_decay(dim: int = 1) -> Scenario:
    """T(t, tau) = Id: bounded growth holds but no dichotomy exists."""
    dim = int(dim)

    def evaluator(t, tau):
        return np.broadcast_to(np.eye(dim), (len(t), dim, dim)).copy()

    fam = EvolutionFamily(dim, evaluator, "closed-form", generator=lambda t: np.zeros((dim, dim)),
                          meta={"name": "no_decay"})
    return Scenario(ScenarioSpec("no_decay", {"dim": dim}), fam, _const_projection(np.eye(dim), "exact"),
                    {"M": 1.0, "a": 0.0})


SCENARIOS: dict[str, Callable[..., Scenario]] = {
    "scalar_contraction": scalar_contraction,
    "scalar_expansion": scalar_expansion,
    "diag_dichotomy": diag_dichotomy,
    "rotated_dichotomy": rotated_dichotomy,
    "nonuniform_contraction": nonuniform_contraction,
    "counterexample": counterexample,
    "no_decay": no_decay,
}


def scenario(spec: ScenarioSpec | str, **params) -> Scenario:
    """Build a named scenario; parameter names accept ``lambda``/``epsilon`` aliases."""
    if isinstance(spec, str):
        spec = ScenarioSpec(spec, params)
    try:
        ctor = SCENARIOS[spec.name]
    except KeyError:
        raise UnknownScenarioError(spec.name) from None
    kwargs = {_ALIASES.get(k, k): v for k, v in spec.params.items()}
    out = ctor(**kwargs)
    if spec.description:
        out.spec.description = spec.description
    return out


def _const_projection(P, tag):
    from .dichotomy import ProjectionFamily

    return ProjectionFamily.constant(P, tag)
