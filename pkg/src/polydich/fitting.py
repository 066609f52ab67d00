"""Power-law fits on log-log point clouds."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog


def ls_slope(x, y) -> tuple[float, float]:
    """Least-squares line y ~ slope * x + intercept."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        return 0.0, float(np.mean(y)) if y.size else 0.0
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def upper_envelope(x, y, slope_bounds=(None, None)) -> tuple[float, float]:
    """Line lying above every point with the smallest total gap.

    Solves the LP  min sum(c + m x_i - y_i)  s.t.  c + m x_i >= y_i.
    The optimum touches the upper convex hull of the cloud.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0:
        return 0.0, 0.0
    if x.size == 1 or np.ptp(x) == 0:
        lo, hi = slope_bounds
        m = 0.0 if lo is None or lo <= 0 else lo
        if hi is not None:
            m = min(m, hi)
        return m, float(np.max(y - m * x))
    # shift x for conditioning; the intercept is restored afterwards
    x0 = float(np.mean(x))
    xs = x - x0
    res = linprog(
        c=[xs.sum(), x.size],
        A_ub=np.column_stack([-xs, -np.ones_like(xs)]),
        b_ub=-y,
        bounds=[slope_bounds, (None, None)],
        method="highs",
    )
    if not res.success:
        m = ls_slope(x, y)[0]
        if slope_bounds[0] is not None:
            m = max(m, slope_bounds[0])
        if slope_bounds[1] is not None:
            m = min(m, slope_bounds[1])
    else:
        m = float(res.x[0])
    c = float(np.max(y - m * x))
    return m, c


def binned_upper_curvature(x, y, bins: int = 8) -> float:
    """Quadratic coefficient of the per-bin maxima of a cloud (0 if too few bins)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or np.ptp(x) == 0:
        return 0.0
    edges = np.linspace(x.min(), x.max(), bins + 1)
    idx = np.clip(np.digitize(x, edges) - 1, 0, bins - 1)
    bx, by = [], []
    for b in range(bins):
        m = idx == b
        if m.any():
            j = np.argmax(np.where(m, y, -np.inf))
            bx.append(x[j])
            by.append(y[j])
    if len(bx) < 3:
        return 0.0
    return float(np.polyfit(bx, by, 2)[0])
