"""Symmetric alpha-AMD objective with inverse-inconsistency regularization.

All per-sample contributions are rounded to 64-bit fixed point (scale 2**32)
before being summed, so totals do not depend on how samples are split into
batches or in which order batches finish.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .bspline import BSplineField, _apply, transform_jacobian_wrt_controls
from .image import FuzzyImage, MaskRegion, WeightMap
from .kdtree import DistanceTree, SearchParams, _mc_point, build_tree

FX_BITS = 32
FX_SCALE = float(1 << FX_BITS)
IIC_STEP = 1e-6

# scalar accumulator slots
S_DIST, S_IIC, S_WEIGHT, S_COUNT, S_SATURATED = range(5)


@njit(cache=True, nogil=True, inline="always")
def _fx(v, scal):
    t = v * 4294967296.0
    if t > 4.611686018427388e18 or t < -4.611686018427388e18 or not (t == t):
        scal[S_SATURATED] += 1
        if t < 0:
            return np.int64(-4611686018427387904)
        return np.int64(4611686018427387904)
    return np.int64(round(t))


@njit(cache=True, nogil=True)
def _side_kernel(pts, heights, weights, seeds,
                 cF, oF, eF, nF, sF,
                 cG, oG, eG, nG, sG,
                 treeD, ctreeD, sizesD, spacingD, depthD, maskD,
                 n_alpha, d_max, beta, d_t, grad_mode, lam,
                 gradF, rhatF, gradG, rhatG, scal):
    """Accumulate one direction (source S mapped by F into D, back by G)."""
    n = pts.shape[1]
    m4 = 4**n
    idxF = np.empty(m4, np.int64)
    wF = np.empty(m4, np.float64)
    idxG = np.empty(m4, np.int64)
    wG = np.empty(m4, np.float64)
    xD = np.empty(n, np.float64)
    xS = np.empty(n, np.float64)
    xk = np.empty(n, np.float64)
    yk = np.empty(n, np.float64)
    r = np.empty(n, np.float64)
    g = np.empty(n, np.float64)
    jac = np.empty((n, n), np.float64)
    alphas = np.empty(n_alpha, np.float64)
    dstride = np.empty(n, np.int64)
    acc = 1
    for j in range(n - 1, -1, -1):
        dstride[j] = acc
        acc *= sizesD[j]
    for s in range(pts.shape[0]):
        x = pts[s]
        w = weights[s]
        inF = _apply(x, cF, oF, eF, nF, sF, idxF, wF, xD)
        # mask test: destination grid box, optionally restricted by a crisp mask
        ok = True
        off = 0
        for j in range(n):
            t = xD[j] / spacingD[j]
            if t < 0.0 or t > sizesD[j] - 1:
                ok = False
                break
            off += int(math.floor(t + 0.5)) * dstride[j]
        if ok and maskD.shape[0] > 0 and maskD[off] == 0:
            ok = False
        if not ok:
            continue
        for a in range(n_alpha):
            v = seeds[s] + a * 0.6180339887498949
            alphas[a] = 1.0 - (v - math.floor(v))
        value, inside = _mc_point(xD, heights[s], alphas, treeD, ctreeD, sizesD, spacingD, depthD,
                                  d_max, beta, d_t, grad_mode, g)
        scal[S_DIST] += _fx(w * value, scal)
        scal[S_WEIGHT] += _fx(w, scal)
        scal[S_COUNT] += 1
        if inF:
            for q in range(m4):
                rq = _fx(0.5 * w * wF[q], scal)
                for k in range(n):
                    gradF[idxF[q], k] += _fx(0.5 * w * g[k] * wF[q], scal)
                    rhatF[idxF[q], k] += rq
        inG = _apply(xD, cG, oG, eG, nG, sG, idxG, wG, xS)
        sq = 0.0
        for j in range(n):
            r[j] = xS[j] - x[j]
            sq += r[j] * r[j]
        scal[S_IIC] += _fx(w * 0.5 * sq, scal)
        if lam == 0.0:
            continue
        c = 0.5 * lam * w
        if inG:
            for q in range(m4):
                rq = _fx(c * wG[q], scal)
                for k in range(n):
                    gradG[idxG[q], k] += _fx(c * r[k] * wG[q], scal)
                    rhatG[idxG[q], k] += rq
        if inF:
            # d x_S' / d x_D by forward differences of G
            for k in range(n):
                for j in range(n):
                    xk[j] = xD[j]
                xk[k] += IIC_STEP
                _apply(xk, cG, oG, eG, nG, sG, idxG, wG, yk)
                for j in range(n):
                    jac[j, k] = (yk[j] - xS[j]) / IIC_STEP
            for l in range(n):
                vl = 0.0
                nl = 0.0
                for j in range(n):
                    vl += r[j] * jac[j, l]
                    nl += jac[j, l] * jac[j, l]
                nl = math.sqrt(nl)
                for q in range(m4):
                    gradF[idxF[q], l] += _fx(c * vl * wF[q], scal)
                    rhatF[idxF[q], l] += _fx(c * nl * wF[q], scal)


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TransformPair:
    forward: BSplineField   # A -> B
    backward: BSplineField  # B -> A

    def __post_init__(self):
        if self.forward.ndim != self.backward.ndim:
            raise ValueError("transforms must share dimensionality")

    def swapped(self) -> "TransformPair":
        return TransformPair(self.backward, self.forward)


def iic(pair: TransformPair, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    back = pair.backward.transform(pair.forward.transform(x[None, :]))[0]
    return 0.5 * float(np.sum((back - x) ** 2))


def iic_derivatives(pair: TransformPair, x) -> tuple[np.ndarray, np.ndarray]:
    """Partials of the round-trip error at ``x`` w.r.t. forward and backward coefficients."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    xb = pair.forward.transform(x[None, :])[0]
    xa = pair.backward.transform(xb[None, :])[0]
    r = xa - x
    gf = np.zeros((pair.forward.n_controls, n))
    gb = np.zeros((pair.backward.n_controls, n))
    sb = transform_jacobian_wrt_controls(pair.backward, xb)
    gb[sb.flat_indices] += sb.weights[:, None] * r[None, :]
    sf = transform_jacobian_wrt_controls(pair.forward, x)
    if sf.weights.size:
        probes = xb[None, :] + IIC_STEP * np.eye(n)
        jac = ((pair.backward.transform(probes) - xa[None, :]) / IIC_STEP).T
        v = r @ jac
        gf[sf.flat_indices] += sf.weights[:, None] * v[None, :]
    return gf.reshape(pair.forward.coeffs.shape), gb.reshape(pair.backward.coeffs.shape)


@dataclass(frozen=True)
class SampleSet:
    """Grid points of a source image with per-point weights and alpha-sequence phases."""

    points: np.ndarray
    weights: np.ndarray
    alpha_seeds: np.ndarray

    def __len__(self):
        return len(self.points)

    def slice(self, lo, hi) -> "SampleSet":
        return SampleSet(self.points[lo:hi], self.weights[lo:hi], self.alpha_seeds[lo:hi])

    @classmethod
    def from_points(cls, points, rng=None, weights=None):
        points = np.asarray(points, dtype=np.int64)
        m = len(points)
        seeds = np.zeros(m) if rng is None else rng.random(m)
        return cls(points, np.ones(m) if weights is None else np.asarray(weights, float), seeds)


@dataclass
class ObjectiveContext:
    A: FuzzyImage
    B: FuzzyImage
    tree_A: DistanceTree
    ctree_A: DistanceTree
    tree_B: DistanceTree
    ctree_B: DistanceTree
    lam: float = 0.005
    search: SearchParams = field(default_factory=SearchParams)
    eps: float = 0.01
    weights_A: WeightMap | None = None
    weights_B: WeightMap | None = None
    mask_A: MaskRegion | None = None
    mask_B: MaskRegion | None = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")

    @classmethod
    def build(cls, A: FuzzyImage, B: FuzzyImage, **kw) -> "ObjectiveContext":
        return cls(A, B, build_tree(A), build_tree(A.complement()), build_tree(B),
                   build_tree(B.complement()), **kw)


@dataclass
class SideTotals:
    grad_src: np.ndarray   # contributions to the source->dest field
    rhat_src: np.ndarray
    grad_dst: np.ndarray   # contributions to the dest->source field
    rhat_dst: np.ndarray
    scalars: np.ndarray

    def __iadd__(self, other):
        self.grad_src += other.grad_src
        self.rhat_src += other.rhat_src
        self.grad_dst += other.grad_dst
        self.rhat_dst += other.rhat_dst
        self.scalars += other.scalars
        return self

    @property
    def weight(self) -> float:
        return self.scalars[S_WEIGHT] / FX_SCALE

    @property
    def accepted(self) -> int:
        return int(self.scalars[S_COUNT])


def _mask_array(mask: MaskRegion | None) -> np.ndarray:
    if mask is None or mask.inside is None:
        return np.zeros(0, dtype=np.uint8)
    return np.ascontiguousarray(mask.inside.ravel(), dtype=np.uint8)


def _side_batch(samples: SampleSet, src: FuzzyImage, wmap: WeightMap | None, F: BSplineField,
                G: BSplineField, tree: DistanceTree, ctree: DistanceTree, mask, search: SearchParams,
                lam: float) -> SideTotals:
    n = src.ndim
    out = SideTotals(np.zeros((F.n_controls, n), np.int64), np.zeros((F.n_controls, n), np.int64),
                     np.zeros((G.n_controls, n), np.int64), np.zeros((G.n_controls, n), np.int64),
                     np.zeros(5, np.int64))
    if len(samples) == 0:
        return out
    idx = samples.points
    pts = np.ascontiguousarray(idx * np.asarray(src.domain.spacing), dtype=np.float64)
    heights = src.membership[tuple(idx.T)]
    w = samples.weights
    if wmap is not None and wmap.weights is not None:
        w = w * wmap.weights[tuple(idx.T)]
    _side_kernel(pts, np.ascontiguousarray(heights), np.ascontiguousarray(w, dtype=np.float64),
                 np.ascontiguousarray(samples.alpha_seeds, dtype=np.float64),
                 *F.kernel_args(), *G.kernel_args(),
                 tree.table, ctree.table, tree.sizes_array, tree.spacing_array, tree.depth, mask,
                 int(search.n_alpha), float(search.d_max), float(search.beta), float(search.threshold),
                 search.gradient_code, float(lam),
                 out.grad_src, out.rhat_src, out.grad_dst, out.rhat_dst, out.scalars)
    return out


def _batch_bounds(count: int, batch_size: int):
    return [(lo, min(lo + batch_size, count)) for lo in range(0, max(count, 1), batch_size)]


def _run_jobs(jobs, threads: int, executor=None):
    if executor is not None:
        return list(executor.map(lambda f: f(), jobs))
    if threads <= 1 or len(jobs) == 1:
        return [f() for f in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda f: f(), jobs))


def _side_jobs(samples, src, wmap, F, G, tree, ctree, mask, search, lam, batch_size):
    mask_arr = _mask_array(mask)
    return [
        (lambda b=b: _side_batch(samples.slice(*b), src, wmap, F, G, tree, ctree, mask_arr, search, lam))
        for b in _batch_bounds(len(samples), batch_size)
    ]


def _merge(parts):
    total = parts[0]
    for p in parts[1:]:
        total += p
    return total


def evaluate_side(samples: SampleSet, src, wmap, F, G, tree, ctree, mask, search, lam,
                  threads: int = 1, batch_size: int = 256, executor=None) -> SideTotals:
    """Run the side kernel over fixed-size batches; the integer merge is order-free."""
    jobs = _side_jobs(samples, src, wmap, F, G, tree, ctree, mask, search, lam, batch_size)
    return _merge(_run_jobs(jobs, threads, executor))


@dataclass
class Evaluation:
    J: float
    amd_forward: float
    amd_backward: float
    iic_forward: float
    iic_backward: float
    grad_forward: np.ndarray       # dJ / d Phi_AB
    grad_backward: np.ndarray      # dJ / d Phi_BA
    scaled_forward: np.ndarray
    scaled_backward: np.ndarray
    accepted: tuple[int, int]
    saturated: int
    degenerate: bool = False

    @property
    def iic_mean(self) -> float:
        return 0.5 * (self.iic_forward + self.iic_backward)


def scale_gradients(gradient, rhat, eps: float) -> np.ndarray:
    """Per-parameter derivative scaling ``g / (r_hat + eps)``."""
    return np.asarray(gradient) / (np.asarray(rhat) + eps)


def amd_term(src: FuzzyImage, tree: DistanceTree, ctree: DistanceTree, T: BSplineField,
             samples: SampleSet, mask: MaskRegion | None = None, search: SearchParams = SearchParams(),
             weights: WeightMap | None = None) -> tuple[float, np.ndarray]:
    """Weighted mean alpha-cut distance of transformed source samples, and its coefficient gradient."""
    tot = evaluate_side(samples, src, weights, T, T, tree, ctree, mask, search, 0.0)
    W = tot.weight
    if tot.accepted == 0 or W <= 0:
        return math.nan, np.zeros(T.coeffs.shape)
    value = tot.scalars[S_DIST] / FX_SCALE / W
    # kernel folds in the 1/2 of the symmetric objective
    grad = 2.0 * tot.grad_src / FX_SCALE / W
    return value, grad.reshape(T.coeffs.shape)


def evaluate_objective(ctx: ObjectiveContext, pair: TransformPair, samples_A: SampleSet,
                       samples_B: SampleSet, threads: int = 1, batch_size: int = 256,
                       executor=None) -> Evaluation:
    """J and its gradients for one pair of sample sets.

    Batches of both directions are dispatched together; results are merged
    per direction by integer addition, so any worker count gives the same bits.
    """
    sp = ctx.search
    jobs_a = _side_jobs(samples_A, ctx.A, ctx.weights_A, pair.forward, pair.backward, ctx.tree_B,
                        ctx.ctree_B, ctx.mask_B, sp, ctx.lam, batch_size)
    jobs_b = _side_jobs(samples_B, ctx.B, ctx.weights_B, pair.backward, pair.forward, ctx.tree_A,
                        ctx.ctree_A, ctx.mask_A, sp, ctx.lam, batch_size)
    parts = _run_jobs(jobs_a + jobs_b, threads, executor)
    a = _merge(parts[:len(jobs_a)])
    b = _merge(parts[len(jobs_a):])
    saturated = int(a.scalars[S_SATURATED] + b.scalars[S_SATURATED])
    shape_f, shape_b = pair.forward.coeffs.shape, pair.backward.coeffs.shape
    Wa, Wb = a.weight, b.weight
    if a.accepted == 0 or b.accepted == 0 or Wa <= 0 or Wb <= 0:
        z_f, z_b = np.zeros(shape_f), np.zeros(shape_b)
        return Evaluation(math.nan, math.nan, math.nan, math.nan, math.nan, z_f, z_b, z_f, z_b,
                          (a.accepted, b.accepted), saturated, degenerate=True)
    amd_f = a.scalars[S_DIST] / FX_SCALE / Wa
    amd_b = b.scalars[S_DIST] / FX_SCALE / Wb
    iic_f = a.scalars[S_IIC] / FX_SCALE / Wa
    iic_b = b.scalars[S_IIC] / FX_SCALE / Wb
    J = 0.5 * (amd_f + amd_b) + 0.5 * ctx.lam * (iic_f + iic_b)
    gf = (a.grad_src / Wa + b.grad_dst / Wb) / FX_SCALE
    gb = (b.grad_src / Wb + a.grad_dst / Wa) / FX_SCALE
    raw_f = (a.grad_src + b.grad_dst) / FX_SCALE
    raw_b = (b.grad_src + a.grad_dst) / FX_SCALE
    rhat_f = (a.rhat_src + b.rhat_dst) / FX_SCALE
    rhat_b = (b.rhat_src + a.rhat_dst) / FX_SCALE
    return Evaluation(
        J, amd_f, amd_b, iic_f, iic_b,
        gf.reshape(shape_f), gb.reshape(shape_b),
        scale_gradients(raw_f, rhat_f, ctx.eps).reshape(shape_f),
        scale_gradients(raw_b, rhat_b, ctx.eps).reshape(shape_b),
        (a.accepted, b.accepted), saturated,
    )
