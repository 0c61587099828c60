"""Device-level model disagreement metrics and the two-sample 2D Kolmogorov-Smirnov statistic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import erfc

from jumptable.device import ConductanceBounds, DeviceDataset, Direction, JumpTablePair, Profile

DEFAULT_EVAL_POINTS = 101
OVLE_TOL = 1e-7

_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def prob_negative(mu, sigma):
    """P(X < 0) for X ~ N(mu, sigma^2); sigma = 0 uses the limit (1, 1/2, 0 for mu <0, =0, >0)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        p = 0.5 * erfc(mu / (sigma * np.sqrt(2.0)))
    degenerate = np.where(mu < 0, 1.0, np.where(mu > 0, 0.0, 0.5))
    out = np.where(sigma > 0, p, degenerate)
    return float(out) if out.ndim == 0 else out


def _as_mu_sigma(x):
    if isinstance(x, Profile):
        return x.mu, x.sigma
    mu, sigma = x
    return np.atleast_1d(np.asarray(mu, dtype=np.float64)), np.atleast_1d(np.asarray(sigma, dtype=np.float64))


def _check_axes(x, y):
    if isinstance(x, Profile) and isinstance(y, Profile) and not np.array_equal(x.knots, y.knots):
        raise ValueError("models must be evaluated on the same conductance axis")
    mx, sx = _as_mu_sigma(x)
    my, sy = _as_mu_sigma(y)
    if mx.shape != my.shape or sx.shape != mx.shape or sy.shape != my.shape:
        raise ValueError("models must be evaluated on the same number of conductance points")
    return mx, sx, my, sy


def ssd(x, y) -> float:
    """Switching sign discrepancy: mean |P(X<0) - P(Y<0)| over the shared axis.

    `x` and `y` are Profiles on identical knots or (mu, sigma) array pairs.
    """
    mx, sx, my, sy = _check_axes(x, y)
    return float(np.mean(np.abs(prob_negative(mx, sx) - prob_negative(my, sy))))


def _normal_pdf(t, mu, sigma):
    z = (t - mu) / sigma
    return np.exp(-0.5 * z * z) / (sigma * np.sqrt(2.0 * np.pi))


def _crossings(m1, s1, m2, s2):
    a = 0.5 / s2**2 - 0.5 / s1**2
    b = m1 / s1**2 - m2 / s2**2
    c = 0.5 * m2**2 / s2**2 - 0.5 * m1**2 / s1**2 + np.log(s2 / s1)
    if a == 0.0:
        return [] if b == 0.0 else [-c / b]
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return []
    r = np.sqrt(disc)
    return sorted({(-b - r) / (2 * a), (-b + r) / (2 * a)})


def _gl(f, lo, hi):
    half = 0.5 * (hi - lo)
    return half * np.dot(_GL_W, f(lo + half * (_GL_X + 1.0)))


def _adaptive_gl(f, lo, hi, tol, depth=0):
    whole = _gl(f, lo, hi)
    mid = 0.5 * (lo + hi)
    left, right = _gl(f, lo, mid), _gl(f, mid, hi)
    if abs(left + right - whole) <= tol or depth >= 30:
        return left + right
    return _adaptive_gl(f, lo, mid, 0.5 * tol, depth + 1) + _adaptive_gl(f, mid, hi, 0.5 * tol, depth + 1)


def overlap_l1(m1: float, s1: float, m2: float, s2: float, tol: float = OVLE_TOL) -> float:
    """Integral over dG of |pdf_1 - pdf_2| for two Gaussians, in [0, 2]."""
    if s1 == 0.0 or s2 == 0.0:
        # atoms carry no overlap with anything except an identical atom
        return 0.0 if (s1 == s2 and m1 == m2) else 2.0
    if m1 == m2 and s1 == s2:
        return 0.0
    s_max = max(s1, s2)
    lo, hi = min(m1, m2) - 8.0 * s_max, max(m1, m2) + 8.0 * s_max
    cuts = [lo] + [c for c in _crossings(m1, s1, m2, s2) if lo < c < hi] + [hi]

    def f(t):
        return np.abs(_normal_pdf(t, m1, s1) - _normal_pdf(t, m2, s2))

    total = sum(_adaptive_gl(f, a, b, tol / (len(cuts) - 1)) for a, b in zip(cuts[:-1], cuts[1:]))
    return float(min(max(total, 0.0), 2.0))


def ovle(x, y) -> float:
    """Overlapping error: half the mean L1 distance between per-state densities."""
    mx, sx, my, sy = _check_axes(x, y)
    vals = [overlap_l1(*map(float, args)) for args in zip(mx, sx, my, sy)]
    return float(np.mean(vals) / 2.0)


@njit(cache=True)
def _sweep_counts(px_sorted, rank_of_point, ax_order, ax, query_rank):
    n = px_sorted.size
    tree = np.zeros(n + 1, dtype=np.int64)
    out = np.empty(ax.size, dtype=np.int64)
    i = 0
    for j in ax_order:
        while i < n and px_sorted[i] <= ax[j]:
            k = rank_of_point[i]
            while k <= n:
                tree[k] += 1
                k += k & (-k)
            i += 1
        total = 0
        k = query_rank[j]
        while k > 0:
            total += tree[k]
            k -= k & (-k)
        out[j] = total
    return out


def _lower_left_counts(px, py, ax, ay):
    """For each anchor j, the number of points with x <= ax[j] and y <= ay[j].

    Sweep over x with a Fenwick tree indexed by y rank, O((n + m) log n).
    """
    order = np.argsort(px, kind="stable")
    py_sorted = np.sort(py)
    # 1-based y rank of every point in x order; ties share a slot, which keeps counts exact
    rank_of_point = np.searchsorted(py_sorted, py[order], side="left") + 1
    query_rank = np.searchsorted(py_sorted, ay, side="right")
    ax_order = np.argsort(ax, kind="stable")
    return _sweep_counts(px[order], rank_of_point.astype(np.int64), ax_order, ax,
                         query_rank.astype(np.int64))


def _quadrant_fractions(px, py, ax, ay):
    n = px.size
    ll = _lower_left_counts(px, py, ax, ay)
    below = np.searchsorted(np.sort(py), ay, side="right")  # y <= anchor
    left = np.searchsorted(np.sort(px), ax, side="right")   # x <= anchor
    lr = below - ll
    ul = left - ll
    ur = n - ll - lr - ul
    return np.stack([ll, lr, ul, ur]) / n


def ks2d(a: DeviceDataset, b: DeviceDataset) -> float:
    """Two-sample 2D KS statistic with quadrants anchored at every pooled sample.

    Quadrants around anchor (x0, y0) are {x<=x0, y<=y0}, {x>x0, y<=y0},
    {x<=x0, y>y0} and {x>x0, y>y0}.
    """
    ax = np.concatenate([a.g, b.g])
    ay = np.concatenate([a.delta_g, b.delta_g])
    fa = _quadrant_fractions(a.g, a.delta_g, ax, ay)
    fb = _quadrant_fractions(b.g, b.delta_g, ax, ay)
    return float(np.max(np.abs(fa - fb)))


def eval_axis(bounds: ConductanceBounds, n_points: int = DEFAULT_EVAL_POINTS) -> np.ndarray:
    """Evenly spaced conductances strictly inside the bounds."""
    if n_points < 1:
        raise ValueError("n_points must be at least 1")
    return np.linspace(bounds.g_min, bounds.g_max, n_points + 2)[1:-1]


@dataclass(frozen=True)
class ModelComparison:
    ssd: float
    ovle: float
    n_eval_points: int
    g_eval_axis: np.ndarray = field(repr=False)
    per_direction: dict = field(default_factory=dict)


def compare_models(x: JumpTablePair, y: JumpTablePair, n_points: int = DEFAULT_EVAL_POINTS) -> ModelComparison:
    """SSD and OVLE for both switching directions on a shared axis; top-level values are averages."""
    axis = eval_axis(x.bounds, n_points)
    per = {}
    for direction in Direction:
        px = x.table(direction).evaluate(axis)
        py = y.table(direction).evaluate(axis)
        per[direction.value] = {"ssd": ssd(px, py), "ovle": ovle(px, py)}
    return ModelComparison(
        ssd=float(np.mean([v["ssd"] for v in per.values()])),
        ovle=float(np.mean([v["ovle"] for v in per.values()])),
        n_eval_points=n_points,
        g_eval_axis=axis,
        per_direction=per,
    )
