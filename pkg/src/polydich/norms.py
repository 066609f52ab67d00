"""Families of norms ||.||_t on R^d and the Lyapunov-norm constructions."""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from .errors import UnboundedSupremumError
from .evolution import EvolutionFamily, operator_norm
from .fitting import upper_envelope

if TYPE_CHECKING:
    from .dichotomy import ProjectionFamily


class NormFamily:
    """Norms ||x||_t for t >= 1.

    ``evaluator(t, X)`` takes a scalar time and an ``(n, d)`` batch of vectors
    and returns ``(n,)`` norms.  ``C`` and ``eps`` are the declared constants
    of ||x|| <= ||x||_t <= C t^eps ||x||; ``None`` means "not declared".
    """

    def __init__(self, dim: int, evaluator: Callable[[float, np.ndarray], np.ndarray], kind: str,
                 C: float | None = None, eps: float | None = None, descriptor: dict | None = None):
        self.dim = int(dim)
        self.kind = kind
        self.C = C
        self.eps = eps
        self.descriptor = descriptor
        self._evaluator = evaluator

    def __repr__(self):
        return f"NormFamily(kind={self.kind!r}, dim={self.dim}, C={self.C}, eps={self.eps})"

    def __call__(self, t: float, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        out = self._evaluator(float(t), np.atleast_2d(x))
        return float(out[0]) if x.ndim == 1 else out

    def paired(self, ts, X) -> np.ndarray:
        """||X[i]||_{ts[i]} for paired arrays."""
        ts = np.asarray(ts, dtype=float)
        X = np.asarray(X, dtype=float).reshape(len(ts), self.dim)
        out = np.empty(len(ts))
        uniq, inv = np.unique(ts, return_inverse=True)
        for k, t in enumerate(uniq):
            m = inv == k
            out[m] = self._evaluator(float(t), X[m])
        return out

    def to_json(self) -> dict:
        if self.descriptor is None:
            raise TypeError(f"{self.kind} norm families are not serialisable")
        return dict(self.descriptor)


class _EuclideanNorm(NormFamily):
    def paired(self, ts, X):
        return np.linalg.norm(np.asarray(X, dtype=float).reshape(len(ts), self.dim), axis=1)


def constant_norm(d: int) -> NormFamily:
    """||x||_t = ||x|| (Euclidean) for every t."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return _EuclideanNorm(d, lambda t, X: np.linalg.norm(X, axis=1), "constant", 1.0, 0.0,
                          {"kind": "constant", "dim": d})


def log_grid(start: float, stop: float, density: int) -> np.ndarray:
    """Points 10^(k/density) in [start, stop] anchored at 1."""
    lo = np.ceil(np.log10(start) * density - 1e-9)
    hi = np.floor(np.log10(stop) * density + 1e-9)
    return 10.0 ** (np.arange(lo, hi + 1) / density)


class _SupNorm:
    """Cached per-time matrices for the supremum-type norms.

    The norm at time tau is  max_k ||MP_k x|| + max_k ||MQ_k x|| (+ max_k ||MB_k x||)
    where the stacks are weighted evolution operators sampled on a fixed log
    grid (plus tau itself).  Sampling on one global grid keeps the sup sets for
    nearby base times nested, which is what makes the constant-one contraction
    hold on samples.
    """

    def __init__(self, family, proj, lam, horizon, density, b, cache_size=4096):
        self.family = family
        self.proj = proj
        self.lam = float(lam)
        self.horizon = float(horizon)
        self.b = b
        self.grid = log_grid(1.0, horizon, density)
        self._cache: OrderedDict[float, tuple] = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()

    def matrices(self, tau: float):
        with self._lock:
            hit = self._cache.get(tau)
            if hit is not None:
                self._cache.move_to_end(tau)
                return hit
        mats = self._build(tau)
        with self._lock:
            self._cache[tau] = mats
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return mats

    def _build(self, tau):
        from .dichotomy import restricted_inverse

        fam, proj, lam = self.family, self.proj, self.lam
        d = fam.dim
        if tau > self.horizon:
            raise ValueError(f"norm requested at t={tau} beyond horizon {self.horizon}")
        g = self.grid
        fwd = np.concatenate([[tau], g[g > tau * (1 + 1e-12)]])
        bwd = np.concatenate([g[g < tau * (1 - 1e-12)], [tau]])
        T_fwd = fam(fwd, tau)
        mats = []
        if proj.rank > 0:
            MP = T_fwd @ proj(tau) * ((fwd / tau) ** lam)[:, None, None]
            w = operator_norm(MP)
            if len(w) > 2 and np.argmax(w) == len(w) - 1 and w[-1] > w[-2] * (1 + 1e-9):
                raise UnboundedSupremumError(
                    f"stable supremum still growing at the horizon (tau={tau}); lambda too large?")
            mats.append(MP)
        if proj.rank < d:
            MQ = restricted_inverse(fam, proj, bwd, tau) * ((tau / bwd) ** lam)[:, None, None]
            mats.append(MQ)
            if self.b is not None:
                MB = T_fwd @ proj.complement(tau) * ((fwd / tau) ** (-self.b))[:, None, None]
                mats.append(MB)
        return mats

    def __call__(self, tau, X):
        # rescale rows so squared entries neither underflow nor overflow
        scale = np.max(np.abs(X), axis=1)
        Xs = X / np.where(scale > 0, scale, 1.0)[:, None]
        total = np.zeros(len(X))
        for M in self.matrices(tau):
            total += np.linalg.norm(np.einsum("kij,nj->nki", M, Xs), axis=2).max(axis=1)
        return total * scale


def _default_lambda(family, proj):
    from .dichotomy import fit_dichotomy

    cert = fit_dichotomy(family, constant_norm(family.dim), proj)
    lams = [v for v in (cert.lambda_stable, cert.lambda_unstable) if v is not None and np.isfinite(v)]
    if not lams or min(lams) <= 0:
        raise ValueError("cannot pick a Lyapunov exponent: no positive fitted decay rate")
    return 0.9 * min(lams)


def lyapunov_norm(family: EvolutionFamily, proj: "ProjectionFamily", lam: float | None = None,
                  horizon: float = 1e4, density: int = 64, C: float | None = None,
                  eps: float | None = None) -> NormFamily:
    """Two-term Lyapunov norm

        ||x||_tau = sup_{t >= tau} ||T(t,tau)P(tau)x|| (t/tau)^lam
                  + sup_{t <= tau} ||T(t,tau)Q(tau)x|| (tau/t)^lam

    with both suprema taken on a log grid (``density`` points per decade),
    the first one truncated at ``horizon``.
    """
    if lam is None:
        lam = _default_lambda(family, proj)
    sup = _SupNorm(family, proj, lam, horizon, density, None)
    desc = {"kind": "lyapunov", "lambda": float(lam), "horizon": horizon, "grid": density}
    return NormFamily(family.dim, sup, "lyapunov", C, eps, desc)


def strong_lyapunov_norm(family: EvolutionFamily, proj: "ProjectionFamily", lam: float | None = None,
                         b: float = 1.0, horizon: float = 1e4, density: int = 64,
                         C: float | None = None, eps: float | None = None) -> NormFamily:
    """Lyapunov norm plus the forward growth term sup_{t >= tau} ||T(t,tau)Q(tau)x|| (t/tau)^-b."""
    if b <= 0:
        raise ValueError("b must be positive")
    if lam is None:
        lam = _default_lambda(family, proj)
    sup = _SupNorm(family, proj, lam, horizon, density, b)
    desc = {"kind": "strong-lyapunov", "lambda": float(lam), "b": b, "horizon": horizon, "grid": density}
    return NormFamily(family.dim, sup, "strong-lyapunov", C, eps, desc)


def norm_from_json(doc: dict, family: EvolutionFamily | None = None, proj=None) -> NormFamily:
    kind = doc["kind"]
    if kind == "constant":
        return constant_norm(int(doc.get("dim", family.dim if family else 1)))
    if family is None or proj is None:
        raise ValueError(f"{kind} norms need the evolution and projection families")
    if kind == "lyapunov":
        return lyapunov_norm(family, proj, doc["lambda"], doc["horizon"], doc["grid"])
    if kind == "strong-lyapunov":
        return strong_lyapunov_norm(family, proj, doc["lambda"], doc["b"], doc["horizon"], doc["grid"])
    raise ValueError(f"unknown norm kind {kind!r}")


@dataclass
class NormEquivalenceReport:
    C: float
    eps: float
    max_violation: float
    n_points: int


def check_norm_equivalence(norms: NormFamily, samples: int = 32, n_vectors: int = 8,
                           tmax: float = 1e3, seed: int = 0) -> NormEquivalenceReport:
    """Fit log||x||_t <= log C + eps log t over random unit x and log-spaced t.

    The fit is the lowest-total-gap upper envelope with eps >= 0.  The
    violation is max(0, ||x|| - ||x||_t) over the samples.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    d = norms.dim
    ts = np.logspace(0, np.log10(tmax), samples)
    X = rng.standard_normal((n_vectors, d))
    X = np.vstack([X / np.linalg.norm(X, axis=1, keepdims=True), np.eye(d)])
    logt, logn, viol = [], [], 0.0
    for t in ts:
        v = norms(t, X)
        viol = max(viol, float(np.max(1.0 - v)))
        logt.append(np.full(len(v), np.log(t)))
        logn.append(np.log(v))
    logt = np.concatenate(logt)
    logn = np.concatenate(logn)
    eps, logC = upper_envelope(logt, logn, slope_bounds=(0.0, None))
    return NormEquivalenceReport(float(np.exp(logC)), float(eps), max(viol, 0.0), len(logt))
