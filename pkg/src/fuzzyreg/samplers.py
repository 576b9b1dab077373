"""Point samplers: quasi-random Kronecker, gradient-weighted, and their mixture."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .image import FuzzyImage


@lru_cache(maxsize=None)
def generalized_golden_ratio(n: int) -> float:
    """Real root > 1 of ``phi**(n+1) = phi + 1`` (golden ratio for n=1, plastic number for n=2)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    phi = 2.0
    for _ in range(100):
        f = phi ** (n + 1) - phi - 1.0
        step = f / ((n + 1) * phi**n - 1.0)
        phi -= step
        if abs(step) < 1e-16:
            break
    return phi


def kronecker_increments(n: int) -> np.ndarray:
    phi = generalized_golden_ratio(n)
    return np.array([phi ** -(j + 1) for j in range(n)])


@dataclass(frozen=True)
class KroneckerSequence:
    sizes: tuple[int, ...]
    start: tuple[float, ...] | None = None

    @property
    def increments(self) -> np.ndarray:
        return kronecker_increments(len(self.sizes))

    def _start(self) -> np.ndarray:
        if self.start is None:
            return np.zeros(len(self.sizes))
        return np.asarray(self.start, dtype=np.float64)

    def points(self, indices) -> np.ndarray:
        """Grid points for the given sequence indices, shape (len(indices), n)."""
        i = np.asarray(indices, dtype=np.float64)[:, None]
        frac = np.mod(self._start()[None, :] + i * self.increments[None, :], 1.0)
        pts = np.floor(frac * np.asarray(self.sizes)[None, :]).astype(np.int64)
        # guards against frac*N rounding up to N
        return np.minimum(pts, np.asarray(self.sizes) - 1)


def kronecker_next(seq: KroneckerSequence, i: int) -> np.ndarray:
    if i < 0:
        raise ValueError("index must be >= 0")
    return seq.points([i])[0]


_GOLDEN_INC = 1.0 / generalized_golden_ratio(1)


def alpha_sequence(n_alpha: int, seed: float) -> np.ndarray:
    """Quasi-random levels in (0, 1] from the 1D golden-ratio sequence started at ``seed``."""
    j = np.arange(n_alpha, dtype=np.float64)
    return 1.0 - np.mod(seed + j * _GOLDEN_INC, 1.0)


def cmf_search(cmf: np.ndarray, u) -> np.ndarray:
    """First index whose cumulative mass exceeds ``u``."""
    idx = np.searchsorted(cmf, u, side="right")
    return np.minimum(idx, len(cmf) - 1)


@dataclass(frozen=True)
class GradientWeightedSampler:
    sizes: tuple[int, ...]
    indices: np.ndarray  # flat indices of grid points with nonzero mass
    probabilities: np.ndarray
    cmf: np.ndarray
    sigma: float
    threshold: float
    degenerate: bool


def build_gradient_weighted(img: FuzzyImage, sigma: float, threshold: float = 1e-9) -> GradientWeightedSampler:
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    gm = ndimage.gaussian_gradient_magnitude(img.membership, sigma, mode="nearest").ravel()
    gm[gm < threshold] = 0.0
    keep = np.flatnonzero(gm)
    if keep.size == 0:
        return GradientWeightedSampler(img.domain.sizes, keep, np.zeros(0), np.zeros(0), sigma, threshold, True)
    mass = gm[keep]
    prob = mass / mass.sum()
    cmf = np.cumsum(prob)
    cmf[-1] = 1.0
    return GradientWeightedSampler(img.domain.sizes, keep, prob, cmf, sigma, threshold, False)


@dataclass(frozen=True)
class MixtureSampler:
    """Draws from ``m * p_gradient + (1 - m) * p_uniform``.

    The uniform component walks a Kronecker sequence whose phase is drawn
    from the stream for each call, so repeated batches stay stratified.
    """

    sizes: tuple[int, ...]
    m: float
    gradient: GradientWeightedSampler | None = None

    def __post_init__(self):
        if not 0.0 <= self.m <= 1.0:
            raise ValueError(f"mixture weight must be in [0, 1], got {self.m}")

    def draw(self, rng: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray]:
        if count < 1:
            raise ValueError("count must be >= 1")
        n = len(self.sizes)
        phase = rng.random(n)
        u_select = rng.random(count)
        u_point = rng.random(count)
        use_gw = u_select < self.m
        if self.gradient is None or self.gradient.degenerate:
            use_gw[:] = False
        out = np.empty((count, n), dtype=np.int64)
        n_gw = int(use_gw.sum())
        if n_gw:
            flat = self.gradient.indices[cmf_search(self.gradient.cmf, u_point[use_gw])]
            out[use_gw] = np.stack(np.unravel_index(flat, self.sizes), axis=-1)
        n_u = count - n_gw
        if n_u:
            seq = KroneckerSequence(self.sizes, tuple(phase))
            out[~use_gw] = seq.points(np.arange(n_u))
        return out, np.ones(count)
