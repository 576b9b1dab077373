"""Implicit max-augmented KD-tree over an image and Monte Carlo alpha-cut distances.

The tree is never stored explicitly: node ``i`` has children ``2i`` and
``2i + 1`` and its rectangle is recomputed on the way down by splitting the
parent along the axis with the largest physical extent.  Each table entry is
the maximum membership inside the node's rectangle, which lets a search at
level alpha skip every sub-tree whose maximum is below alpha.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .image import FuzzyImage, FuzzyPoint, GridDomain
from .samplers import alpha_sequence

GRADIENT_MIDPOINT = 0
GRADIENT_INTERPOLANT = 1
_GRADIENT_MODES = {"midpoint": GRADIENT_MIDPOINT, "interpolant": GRADIENT_INTERPOLANT}

DEFAULT_MAX_TABLE = 1 << 30


class CapacityError(MemoryError):
    pass


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True, nogil=True)
def _split_dim(R, s):
    k = 0
    best = -1.0
    for j in range(R.shape[0]):
        e = s[j] * (R[j] - 1)
        if e > best:
            best = e
            k = j
    return k


@njit(cache=True, nogil=True)
def _build_table(mu, sizes, spacing, table, depth):
    n = sizes.shape[0]
    strides = np.empty(n, np.int64)
    acc = 1
    for j in range(n - 1, -1, -1):
        strides[j] = acc
        acc *= sizes[j]
    total = acc
    cap = 2 * depth + 4
    st_i = np.empty(cap, np.int64)
    st_y = np.empty((cap, n), np.int64)
    st_R = np.empty((cap, n), np.int64)
    internal = np.empty(total, np.int64)
    n_int = 0
    sp = 0
    st_i[0] = 1
    for j in range(n):
        st_y[0, j] = 0
        st_R[0, j] = sizes[j]
    sp = 1
    while sp > 0:
        sp -= 1
        i = st_i[sp]
        y = st_y[sp].copy()
        R = st_R[sp].copy()
        vol = 1
        for j in range(n):
            vol *= R[j]
        if vol == 1:
            off = 0
            for j in range(n):
                off += y[j] * strides[j]
            table[i] = mu[off]
            continue
        internal[n_int] = i
        n_int += 1
        k = _split_dim(R, spacing)
        r1 = (R[k] + 1) // 2
        # right child
        st_i[sp] = 2 * i + 1
        for j in range(n):
            st_y[sp, j] = y[j]
            st_R[sp, j] = R[j]
        st_y[sp, k] = y[k] + r1
        st_R[sp, k] = R[k] - r1
        sp += 1
        # left child
        st_i[sp] = 2 * i
        for j in range(n):
            st_y[sp, j] = y[j]
            st_R[sp, j] = R[j]
        st_R[sp, k] = r1
        sp += 1
    for t in range(n_int - 1, -1, -1):
        i = internal[t]
        a = table[2 * i]
        b = table[2 * i + 1]
        table[i] = a if a > b else b


@njit(cache=True, nogil=True, inline="always")
def _rect_bound(x, y, R, s):
    acc = 0.0
    for j in range(x.shape[0]):
        lo = y[j] * s[j]
        hi = (y[j] + R[j] - 1) * s[j]
        d = 0.0
        if lo - x[j] > d:
            d = lo - x[j]
        if x[j] - hi > d:
            d = x[j] - hi
        acc += d * d
    return math.sqrt(acc)


@njit(cache=True, nogil=True, inline="always")
def _relax(d, d_t, beta):
    over = beta * (d - d_t)
    if over < 0.0:
        over = 0.0
    return over + (d_t if d_t < d else d)


@njit(cache=True, nogil=True)
def _search(table, sizes, spacing, depth, points, levels, D, d_t, beta):
    """Joint nearest-spel search for several ascending levels and query points.

    ``D[j, c]`` is lowered to the distance from ``points[c]`` to the nearest
    spel with membership >= ``levels[j]``.  A sub-tree is skipped when every
    level still active in it exceeds its maximum, or when no active
    (level, point) pair can improve on its relaxed lower bound.
    """
    k_all = levels.shape[0]
    if k_all == 0:
        return
    n = sizes.shape[0]
    nc = points.shape[0]
    cap = 2 * depth + 4
    st_i = np.empty(cap, np.int64)
    st_y = np.empty((cap, n), np.int64)
    st_R = np.empty((cap, n), np.int64)
    st_i[0] = 1
    for j in range(n):
        st_y[0, j] = 0
        st_R[0, j] = sizes[j]
    sp = 1
    y = np.empty(n, np.int64)
    R = np.empty(n, np.int64)
    while sp > 0:
        sp -= 1
        i = st_i[sp]
        for j in range(n):
            y[j] = st_y[sp, j]
            R[j] = st_R[sp, j]
        tau = table[i]
        act = 0
        while act < k_all and levels[act] <= tau:
            act += 1
        if act == 0:
            continue
        prune = True
        for c in range(nc):
            b = _relax(_rect_bound(points[c], y, R, spacing), d_t, beta)
            for a in range(act):
                if D[a, c] > b:
                    prune = False
                    break
            if not prune:
                break
        if prune:
            continue
        vol = 1
        for j in range(n):
            vol *= R[j]
        if vol == 1:
            for c in range(nc):
                acc = 0.0
                for j in range(n):
                    t = points[c, j] - y[j] * spacing[j]
                    acc += t * t
                d = math.sqrt(acc)
                for a in range(act):
                    if d < D[a, c]:
                        D[a, c] = d
            continue
        k = _split_dim(R, spacing)
        r1 = (R[k] + 1) // 2
        y2k = y[k] + r1
        left_first = points[0, k] <= y2k * spacing[k]
        # push the child to visit second first
        for second in range(2):
            go_left = (second == 0) != left_first
            st_i[sp] = 2 * i if go_left else 2 * i + 1
            for j in range(n):
                st_y[sp, j] = y[j]
                st_R[sp, j] = R[j]
            if go_left:
                st_R[sp, k] = r1
            else:
                st_y[sp, k] = y2k
                st_R[sp, k] = R[k] - r1
            sp += 1


@njit(cache=True, nogil=True)
def _cell_corners(p, sizes, spacing, corners, u):
    """Fill the 2^n grid-point corners of the cell containing ``p``; return False outside."""
    n = sizes.shape[0]
    inside = True
    base = np.empty(n, np.int64)
    for j in range(n):
        t = p[j] / spacing[j]
        if t < 0.0 or t > sizes[j] - 1:
            inside = False
        if sizes[j] == 1:
            base[j] = 0
            u[j] = 0.0
            continue
        b = int(math.floor(t))
        if b < 0:
            b = 0
        if b > sizes[j] - 2:
            b = sizes[j] - 2
        base[j] = b
        f = t - b
        u[j] = 0.0 if f < 0.0 else (1.0 if f > 1.0 else f)
    for c in range(corners.shape[0]):
        for j in range(n):
            idx = base[j] + ((c >> j) & 1)
            if idx > sizes[j] - 1:
                idx = sizes[j] - 1
            corners[c, j] = idx * spacing[j]
    return inside


@njit(cache=True, nogil=True)
def _sort_small(a):
    for i in range(1, a.shape[0]):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


@njit(cache=True, nogil=True)
def _alpha_distances(h, alphas, corners, tree, ctree, sizes, spacing, depth, d_max, beta, d_t, Dall):
    """Per-alpha saturated distances from each corner: inwards cut when alpha <= h, else complement."""
    na = alphas.shape[0]
    nc = corners.shape[0]
    n_in = 0
    for a in range(na):
        if alphas[a] <= h:
            n_in += 1
    lv_in = np.empty(n_in, np.float64)
    lv_out = np.empty(na - n_in, np.float64)
    ii = 0
    io = 0
    for a in range(na):
        if alphas[a] <= h:
            lv_in[ii] = alphas[a]
            ii += 1
        else:
            lv_out[io] = 1.0 - alphas[a]
            io += 1
    _sort_small(lv_in)
    _sort_small(lv_out)
    D_in = np.full((n_in, nc), d_max)
    D_out = np.full((na - n_in, nc), d_max)
    _search(tree, sizes, spacing, depth, corners, lv_in, D_in, d_t, beta)
    _search(ctree, sizes, spacing, depth, corners, lv_out, D_out, d_t, beta)
    # rows come back in sorted-level order; alpha order is irrelevant to the
    # average but Dall is indexed like the sorted levels (inwards first)
    for a in range(n_in):
        for c in range(nc):
            Dall[a, c] = D_in[a, c]
    for a in range(na - n_in):
        for c in range(nc):
            Dall[n_in + a, c] = D_out[a, c]


@njit(cache=True, nogil=True)
def _interp(Dbar, u, spacing, grad_mode, g):
    n = u.shape[0]
    nc = Dbar.shape[0]
    value = 0.0
    for c in range(nc):
        w = 1.0
        for j in range(n):
            w *= u[j] if (c >> j) & 1 else 1.0 - u[j]
        value += w * Dbar[c]
    half = nc // 2
    for k in range(n):
        acc = 0.0
        for c in range(nc):
            sgn = 1.0 if (c >> k) & 1 else -1.0
            if grad_mode == 0:
                acc += sgn * Dbar[c]
            else:
                w = 1.0
                for j in range(n):
                    if j != k:
                        w *= u[j] if (c >> j) & 1 else 1.0 - u[j]
                acc += sgn * w * Dbar[c]
        if grad_mode == 0:
            acc /= half
        g[k] = acc / spacing[k]
    return value


@njit(cache=True, nogil=True)
def _mc_point(p, h, alphas, tree, ctree, sizes, spacing, depth, d_max, beta, d_t, grad_mode, g):
    """Distance estimate and spatial gradient at ``p``; returns (value, inside)."""
    n = sizes.shape[0]
    nc = 1 << n
    corners = np.empty((nc, n), np.float64)
    u = np.empty(n, np.float64)
    inside = _cell_corners(p, sizes, spacing, corners, u)
    if not inside:
        for j in range(n):
            g[j] = 0.0
        return 0.0, False
    na = alphas.shape[0]
    Dall = np.empty((na, nc), np.float64)
    _alpha_distances(h, alphas, corners, tree, ctree, sizes, spacing, depth, d_max, beta, d_t, Dall)
    Dbar = np.zeros(nc, np.float64)
    for a in range(na):
        for c in range(nc):
            Dbar[c] += Dall[a, c]
    for c in range(nc):
        Dbar[c] /= na
    return _interp(Dbar, u, spacing, grad_mode, g), True


# --------------------------------------------------------------------------
# python API


@dataclass(frozen=True)
class DistanceTree:
    table: np.ndarray
    domain: GridDomain
    depth: int

    @property
    def gamma(self) -> int:
        return self.depth + 1

    @property
    def root(self) -> float:
        return float(self.table[1])

    @property
    def sizes_array(self) -> np.ndarray:
        return np.asarray(self.domain.sizes, dtype=np.int64)

    @property
    def spacing_array(self) -> np.ndarray:
        return np.asarray(self.domain.spacing, dtype=np.float64)


def build_tree(img: FuzzyImage, max_entries: int = DEFAULT_MAX_TABLE) -> DistanceTree:
    sizes = np.asarray(img.domain.sizes, dtype=np.int64)
    depth = int(sum(math.ceil(math.log2(int(n))) for n in sizes))
    n_entries = 1 << (depth + 1)
    if n_entries > max_entries:
        raise CapacityError(f"tree table needs {n_entries} entries (cap {max_entries})")
    table = np.zeros(n_entries, dtype=np.float64)
    _build_table(img.membership.ravel(), sizes, np.asarray(img.domain.spacing), table, depth)
    return DistanceTree(table, img.domain, depth)


def split_rect(y, R, s):
    """Halve rectangle ``(y, R)`` along ``argmax_k s_k (R_k - 1)`` (0-based ``k``)."""
    y = np.asarray(y, dtype=np.int64)
    R = np.asarray(R, dtype=np.int64)
    if np.prod(R) < 2:
        raise ValueError("cannot split a single-spel rectangle")
    k = int(_split_dim(R, np.asarray(s, dtype=np.float64)))
    R1, R2 = R.copy(), R.copy()
    R1[k] = (R[k] + 1) // 2
    R2[k] = R[k] - R1[k]
    y2 = y.copy()
    y2[k] += R1[k]
    return y.copy(), y2, R1, R2, k


def rect_lower_bound(x, y, R, s) -> float:
    return float(_rect_bound(np.asarray(x, np.float64), np.asarray(y, np.int64),
                             np.asarray(R, np.int64), np.asarray(s, np.float64)))


def relaxed_lower_bound(x, y, R, s, d_t: float, beta: float) -> float:
    if beta < 1:
        raise ValueError("beta must be >= 1")
    return float(_relax(rect_lower_bound(x, y, R, s), d_t, beta))


def search(tree: DistanceTree, points, alpha: float, d_max: float, beta: float = 1.0,
           d_t: float | None = None) -> np.ndarray:
    """Saturated distances from each physical point to the alpha-cut of the tree's image."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    D = np.full((1, pts.shape[0]), float(d_max))
    if d_t is None:
        d_t = float(d_max)
    _search(tree.table, tree.sizes_array, tree.spacing_array, tree.depth, pts,
            np.array([alpha], dtype=np.float64), D, float(d_t), float(beta))
    return D[0]


@dataclass(frozen=True)
class SearchParams:
    n_alpha: int = 7
    d_max: float = 1e9
    beta: float = 1.0
    d_t: float | None = None
    alpha_seed: float = 0.0
    alpha_sampling: str = "kronecker"
    gradient: str = "midpoint"

    def __post_init__(self):
        if self.n_alpha < 1:
            raise ValueError("n_alpha must be >= 1")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.d_t is not None and not 0 <= self.d_t <= self.d_max:
            raise ValueError("d_t must lie in [0, d_max]")
        if self.alpha_sampling not in ("kronecker", "uniform"):
            raise ValueError(f"unknown alpha sampling {self.alpha_sampling!r}")
        if self.gradient not in _GRADIENT_MODES:
            raise ValueError(f"unknown gradient mode {self.gradient!r}")

    @property
    def threshold(self) -> float:
        return self.d_max if self.d_t is None else self.d_t

    @property
    def gradient_code(self) -> int:
        return _GRADIENT_MODES[self.gradient]

    def alphas(self) -> np.ndarray:
        if self.alpha_sampling == "kronecker":
            return alpha_sequence(self.n_alpha, self.alpha_seed)
        rng = np.random.default_rng(int(self.alpha_seed * 2**53))
        return 1.0 - rng.random(self.n_alpha)


@dataclass(frozen=True)
class DistanceSample:
    value: float
    gradient: np.ndarray
    inside: bool


def mc_distance_gradient(p: FuzzyPoint, tree: DistanceTree, ctree: DistanceTree,
                         params: SearchParams) -> DistanceSample:
    if tree.domain != ctree.domain:
        raise ValueError("tree and complement tree must share a domain")
    g = np.zeros(tree.domain.ndim)
    value, inside = _mc_point(p.position, float(p.height), params.alphas(), tree.table, ctree.table,
                              tree.sizes_array, tree.spacing_array, tree.depth, float(params.d_max),
                              float(params.beta), float(params.threshold), params.gradient_code, g)
    return DistanceSample(float(value), g, bool(inside))


def mc_alpha_samples(p: FuzzyPoint, tree: DistanceTree, ctree: DistanceTree,
                     params: SearchParams) -> np.ndarray:
    """Interpolated per-level distances d'(p; alpha_j), whose mean is the estimate."""
    n = tree.domain.ndim
    nc = 1 << n
    corners = np.empty((nc, n))
    u = np.empty(n)
    if not _cell_corners(p.position, tree.sizes_array, tree.spacing_array, corners, u):
        return np.zeros(params.n_alpha)
    alphas = params.alphas()
    Dall = np.empty((alphas.size, nc))
    _alpha_distances(float(p.height), alphas, corners, tree.table, ctree.table, tree.sizes_array,
                     tree.spacing_array, tree.depth, float(params.d_max), float(params.beta),
                     float(params.threshold), Dall)
    bits = (np.arange(nc)[:, None] >> np.arange(n)[None, :]) & 1
    w = np.prod(np.where(bits == 1, u[None, :], 1.0 - u[None, :]), axis=1)
    return Dall @ w
