"""Uniform cubic B-spline free-form deformations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _basis4(u, out):
    v = 1.0 - u
    u2 = u * u
    u3 = u2 * u
    out[0] = v * v * v / 6.0
    out[1] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0
    out[2] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0
    out[3] = u3 / 6.0


@njit(cache=True, nogil=True)
def _support(x, origin, extent, counts, strides, idx, w):
    """Flat control indices and tensor weights of the 4^n controls acting at ``x``.

    Returns False (identity) when ``x`` lies outside the closed support box.
    """
    n = x.shape[0]
    cell = np.empty(n, np.int64)
    w1 = np.empty((n, 4), np.float64)
    for j in range(n):
        t = x[j] - origin[j]
        if t < 0.0 or t > extent[j] or not (t == t):
            return False
        t = t / (extent[j] / counts[j])
        c = int(math.floor(t))
        if c > counts[j] - 1:
            c = counts[j] - 1
        _basis4(t - c, w1[j])
        cell[j] = c
    m = idx.shape[0]
    for q in range(m):
        off = 0
        wt = 1.0
        r = q
        for j in range(n - 1, -1, -1):
            i = r & 3
            r >>= 2
            off += (cell[j] + i) * strides[j]
            wt *= w1[j, i]
        idx[q] = off
        w[q] = wt
    return True


@njit(cache=True, nogil=True)
def _apply(x, coeffs, origin, extent, counts, strides, idx, w, out):
    n = x.shape[0]
    for j in range(n):
        out[j] = x[j]
    if not _support(x, origin, extent, counts, strides, idx, w):
        return False
    for q in range(idx.shape[0]):
        for j in range(n):
            out[j] += w[q] * coeffs[idx[q], j]
    return True


@njit(cache=True, nogil=True)
def _apply_many(points, coeffs, origin, extent, counts, strides, out):
    n = points.shape[1]
    idx = np.empty(4**n, np.int64)
    w = np.empty(4**n, np.float64)
    for p in range(points.shape[0]):
        _apply(points[p], coeffs, origin, extent, counts, strides, idx, w, out[p])


def basis(u: float) -> np.ndarray:
    """The four cubic B-spline weights at fractional offset ``u`` in [0, 1)."""
    out = np.empty(4)
    _basis4(float(u), out)
    return out


@dataclass(frozen=True)
class BSplineField:
    """Control-point displacement mesh over a physical box.

    ``counts[k]`` cells span the box along axis ``k``; the mesh carries
    ``counts[k] + 3`` controls so every point in the box has full support.
    ``coeffs`` is shaped ``(*(counts + 3), n)`` in length units.
    """

    counts: tuple[int, ...]
    origin: np.ndarray
    extent: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 1 for c in counts):
            raise ValueError("control counts must be >= 1")
        origin = np.asarray(self.origin, dtype=np.float64)
        extent = np.asarray(self.extent, dtype=np.float64)
        if np.any(extent <= 0):
            raise ValueError("support extent must be positive along every axis")
        coeffs = np.ascontiguousarray(self.coeffs, dtype=np.float64)
        n = len(counts)
        if coeffs.shape != tuple(c + 3 for c in counts) + (n,):
            raise ValueError(f"coefficient shape {coeffs.shape} does not match counts {counts}")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, counts, extent, origin=None) -> "BSplineField":
        counts = tuple(int(c) for c in counts)
        n = len(counts)
        if origin is None:
            origin = np.zeros(n)
        return cls(counts, origin, extent, np.zeros(tuple(c + 3 for c in counts) + (n,)))

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def spacing(self) -> np.ndarray:
        return self.extent / np.asarray(self.counts)

    @property
    def mesh_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-1]

    @property
    def n_controls(self) -> int:
        return int(np.prod(self.mesh_shape))

    @property
    def strides(self) -> np.ndarray:
        shape = self.mesh_shape
        st = np.ones(len(shape), dtype=np.int64)
        for j in range(len(shape) - 2, -1, -1):
            st[j] = st[j + 1] * shape[j + 1]
        return st

    @property
    def counts_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    def flat_coeffs(self) -> np.ndarray:
        return self.coeffs.reshape(-1, self.ndim)

    def with_coeffs(self, coeffs) -> "BSplineField":
        return BSplineField(self.counts, self.origin, self.extent, np.reshape(coeffs, self.coeffs.shape))

    def kernel_args(self):
        return (self.flat_coeffs(), self.origin, self.extent, self.counts_array, self.strides)

    def transform(self, points) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        out = np.empty_like(pts)
        _apply_many(pts, *self.kernel_args(), out)
        return out

    def displacement(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return self.transform(pts) - pts


def transform_point(field: BSplineField, x) -> np.ndarray:
    return field.transform(np.asarray(x, dtype=np.float64)[None, :])[0]


class LocalSupport(NamedTuple):
    base_index: np.ndarray
    fractional: np.ndarray
    weights: np.ndarray
    flat_indices: np.ndarray


def transform_jacobian_wrt_controls(field: BSplineField, x) -> LocalSupport:
    """Basis products d T_k / d Phi^k for the controls around ``x`` (empty outside support)."""
    x = np.asarray(x, dtype=np.float64)
    n = field.ndim
    idx = np.empty(4**n, dtype=np.int64)
    w = np.empty(4**n)
    if not _support(x, field.origin, field.extent, field.counts_array, field.strides, idx, w):
        return LocalSupport(np.zeros(n, np.int64), np.zeros(n), np.zeros(0), np.zeros(0, np.int64))
    t = (x - field.origin) / field.spacing
    cell = np.minimum(np.floor(t).astype(np.int64), field.counts_array - 1)
    # conventional index z = floor(x / delta) - 1, relative to the unpadded mesh
    return LocalSupport(cell - 1, t - cell, w, idx)


class RefineReport(NamedTuple):
    rms_residual: float
    ridge_used: bool


def _design_1d(positions, count, length):
    delta = length / count
    t = positions / delta
    cell = np.minimum(np.floor(t).astype(np.int64), count - 1)
    u = t - cell
    B = np.zeros((positions.size, count + 3))
    w = np.empty(4)
    for r in range(positions.size):
        _basis4(u[r], w)
        B[r, cell[r]:cell[r] + 4] = w
    return B


def _lsq_operator(B):
    """Left pseudo-inverse of a 1D design matrix, ridged if near-singular."""
    G = B.T @ B
    ridge = np.linalg.cond(G) > 1e12
    if ridge:
        G = G + 1e-8 * np.eye(G.shape[0])
    return np.linalg.solve(G, B.T), ridge


def refine(field: BSplineField, new_counts, fit_density: int = 3) -> tuple[BSplineField, RefineReport]:
    """Least-squares fit of a denser mesh to an existing field's displacement.

    The fit is sampled on a tensor lattice of ``fit_density`` points per
    axis per new cell, so the problem separates into one small 1D solve per
    axis.
    """
    new_counts = tuple(int(c) for c in new_counts)
    if len(new_counts) != field.ndim:
        raise ValueError("dimension mismatch")
    if any(c_new < c for c_new, c in zip(new_counts, field.counts)):
        raise ValueError("refine cannot reduce the number of control points")
    if fit_density < 1:
        raise ValueError("fit_density must be >= 1")
    axes = []
    ops = []
    ridge_any = False
    for c, L in zip(new_counts, field.extent):
        k = np.arange(c * fit_density)
        pos = (k + 0.5) * (L / (c * fit_density))
        axes.append(pos)
        P, ridge = _lsq_operator(_design_1d(pos, c, L))
        ops.append(P)
        ridge_any |= ridge
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1) + field.origin
    Y = field.displacement(pts).reshape(tuple(a.size for a in axes) + (field.ndim,))
    C = Y
    for ax, P in enumerate(ops):
        C = np.moveaxis(np.tensordot(P, C, axes=([1], [ax])), 0, ax)
    new = BSplineField(new_counts, field.origin, field.extent, C)
    fitted = new.displacement(pts).reshape(Y.shape)
    rms = float(np.sqrt(np.mean(np.sum((fitted - Y) ** 2, axis=-1))))
    return new, RefineReport(rms, ridge_any)
