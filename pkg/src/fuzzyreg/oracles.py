"""Slow reference implementations used to check the fast kernels.

Everything here is written directly from the definitions with plain numpy
loops or dense arrays, sharing no code with the kernels it checks.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def spel_positions(sizes, spacing) -> np.ndarray:
    axes = [np.arange(n) * s for n, s in zip(sizes, spacing)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(sizes))


def scan_distance(mu, spacing, point, alpha, d_max) -> float:
    """Distance from ``point`` to the nearest spel with membership >= alpha, capped at d_max."""
    pos = spel_positions(mu.shape, spacing)
    sel = mu.ravel() >= alpha
    if not sel.any():
        return float(d_max)
    d = np.sqrt(np.min(np.sum((pos[sel] - np.asarray(point)) ** 2, axis=1)))
    return float(min(d, d_max))


def scan_distance_complement(mu, spacing, point, alpha, d_max) -> float:
    """Distance to the nearest spel with membership <= alpha (complement cut at 1 - alpha)."""
    return scan_distance(1.0 - np.asarray(mu), spacing, point, 1.0 - alpha, d_max)


def exact_bidirectional(mu, spacing, point, h, d_max) -> float:
    """Integral over alpha of the inwards and complement distances, by sweeping level breakpoints.

    ``point`` must be a spel position; between consecutive distinct
    membership values both cut families are constant, so the integral is a
    finite sum.
    """
    mu = np.asarray(mu, dtype=np.float64)
    levels = np.unique(np.concatenate([mu.ravel(), [0.0, 1.0, h]]))
    total = 0.0
    for lo, hi in zip(levels[:-1], levels[1:]):
        width = hi - lo
        if hi <= h:
            # alpha in (lo, hi]: cut {mu >= alpha} equals {mu >= hi}
            total += width * scan_distance(mu, spacing, point, hi, d_max)
        else:
            # alpha in [lo, hi): set {mu <= alpha} equals {mu <= lo}
            total += width * scan_distance_complement(mu, spacing, point, lo, d_max)
    return total


def exact_bidirectional_interp(mu, spacing, point, h, d_max) -> float:
    """Multilinear interpolation of ``exact_bidirectional`` over the enclosing cell corners."""
    mu = np.asarray(mu)
    spacing = np.asarray(spacing, dtype=np.float64)
    t = np.asarray(point, dtype=np.float64) / spacing
    n = mu.ndim
    base = np.minimum(np.floor(t).astype(int), np.array(mu.shape) - 2)
    base = np.maximum(base, 0)
    u = t - base
    total = 0.0
    for bits in itertools.product((0, 1), repeat=n):
        w = 1.0
        for k, b in enumerate(bits):
            w *= u[k] if b else 1.0 - u[k]
        if w == 0.0:
            continue
        corner = (base + np.array(bits)) * spacing
        total += w * exact_bidirectional(mu, spacing, corner, h, d_max)
    return total


def bspline_basis(i: int, u: float) -> float:
    """Uniform cubic B-spline pieces, written from the polynomial definitions."""
    if i == 0:
        return (1 - u) ** 3 / 6
    if i == 1:
        return (3 * u**3 - 6 * u**2 + 4) / 6
    if i == 2:
        return (-3 * u**3 + 3 * u**2 + 3 * u + 1) / 6
    if i == 3:
        return u**3 / 6
    raise ValueError(i)


def bspline_transform(coeffs, counts, origin, extent, x) -> np.ndarray:
    """Direct tensor-product evaluation of x + sum B(u) phi over the 4^n neighborhood."""
    x = np.asarray(x, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    extent = np.asarray(extent, dtype=np.float64)
    t = x - origin
    if np.any(t < 0) or np.any(t > extent):
        return x.copy()
    delta = extent / np.asarray(counts)
    s = t / delta
    cell = np.minimum(np.floor(s).astype(int), np.asarray(counts) - 1)
    u = s - cell
    out = x.copy()
    for offs in itertools.product(range(4), repeat=len(counts)):
        w = 1.0
        for k, o in enumerate(offs):
            w *= bspline_basis(o, u[k])
        out += w * coeffs[tuple(cell + np.array(offs))]
    return out


def kronecker_1d(i: int, N: int) -> int:
    """floor(N * frac(i / golden ratio)) from the closed-form golden ratio."""
    phi = (1 + math.sqrt(5)) / 2
    return int(math.floor(N * ((i / phi) % 1.0)))


def linear_cmf_search(cmf, u) -> int:
    for k, c in enumerate(cmf):
        if u < c:
            return k
    return len(cmf) - 1


def chi_square_pvalue(counts, probs) -> float:
    from scipy import stats

    counts = np.asarray(counts, dtype=np.float64)
    expected = counts.sum() * np.asarray(probs, dtype=np.float64)
    return float(stats.chisquare(counts, expected).pvalue)
