"""Gray-scale images as spatial fuzzy sets, plus per-level preprocessing."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class DegenerateContrastWarning(UserWarning):
    """Raised (as a warning) when an image has no usable intensity range."""


@dataclass(frozen=True)
class GridDomain:
    """Rectangular grid of spels with physical spacing.

    Grid point ``i`` sits at physical position ``i * spacing``.
    """

    sizes: tuple[int, ...]
    spacing: tuple[float, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        spacing = tuple(float(s) for s in self.spacing)
        if len(sizes) not in (1, 2, 3):
            raise ValueError(f"unsupported dimensionality {len(sizes)}")
        if len(spacing) != len(sizes):
            raise ValueError("sizes and spacing must have the same length")
        if any(s < 1 for s in sizes):
            raise ValueError(f"all sizes must be >= 1, got {sizes}")
        if any(not (s > 0) for s in spacing):
            raise ValueError(f"all spacings must be > 0, got {spacing}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return len(self.sizes)

    @property
    def size(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def extent(self) -> np.ndarray:
        """Physical distance from the first to the last grid point."""
        return (np.asarray(self.sizes) - 1) * np.asarray(self.spacing)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, points) -> np.ndarray:
        """True for physical points inside the closed grid bounding box."""
        p = np.asarray(points, dtype=np.float64)
        ext = self.extent
        return np.all((p >= 0.0) & (p <= ext), axis=-1)

    def grid_points(self) -> np.ndarray:
        """Physical coordinates of every grid point, C-order, shape (size, n)."""
        axes = [np.arange(n) * s for n, s in zip(self.sizes, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class FuzzyImage:
    domain: GridDomain
    membership: np.ndarray

    def __post_init__(self):
        mu = np.ascontiguousarray(self.membership, dtype=np.float64)
        if mu.shape != self.domain.sizes:
            raise ValueError(f"membership shape {mu.shape} != domain sizes {self.domain.sizes}")
        if mu.size and (mu.min() < 0.0 or mu.max() > 1.0 or not np.all(np.isfinite(mu))):
            raise ValueError("membership values must lie in [0, 1]")
        object.__setattr__(self, "membership", mu)

    @classmethod
    def from_array(cls, array, spacing=None, clip: bool = True) -> "FuzzyImage":
        a = np.asarray(array, dtype=np.float64)
        if spacing is None:
            spacing = (1.0,) * a.ndim
        if clip:
            a = np.clip(a, 0.0, 1.0)
        return cls(GridDomain(a.shape, tuple(spacing)), a)

    @property
    def ndim(self) -> int:
        return self.domain.ndim

    @property
    def height(self) -> float:
        return float(self.membership.max())

    def complement(self) -> "FuzzyImage":
        return FuzzyImage(self.domain, 1.0 - self.membership)

    def with_membership(self, mu) -> "FuzzyImage":
        return FuzzyImage(self.domain, mu)


@dataclass(frozen=True)
class FuzzyPoint:
    position: np.ndarray
    height: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        if not 0.0 <= self.height <= 1.0:
            raise ValueError(f"fuzzy point height must be in [0, 1], got {self.height}")


@dataclass(frozen=True)
class MaskRegion:
    """Crisp region of a grid domain; ``inside=None`` means the full bounding box."""

    domain: GridDomain
    inside: np.ndarray | None = None

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        ok = self.domain.contains(p)
        if self.inside is None:
            return ok
        idx = np.rint(p / np.asarray(self.domain.spacing)).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.domain.sizes) - 1)
        return ok & self.inside[tuple(idx.T)]


@dataclass(frozen=True)
class WeightMap:
    """Nonnegative per-spel weights; ``weights=None`` means uniform one."""

    domain: GridDomain
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != self.domain.sizes:
                raise ValueError("weight array shape does not match domain")
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            object.__setattr__(self, "weights", w)

    def flat(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.domain.size)
        return self.weights.ravel()


def alpha_cut(img: FuzzyImage, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return img.membership >= alpha


def gaussian_pyramid_level(img: FuzzyImage, sigma: float, factor: int) -> FuzzyImage:
    """Smooth with an isotropic Gaussian (sigma in spels), then keep every ``factor``-th spel."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor > min(img.domain.sizes):
        raise ValueError(f"factor {factor} exceeds image size {img.domain.sizes}")
    mu = img.membership
    if sigma > 0:
        mu = ndimage.gaussian_filter(mu, sigma, mode="nearest", truncate=4.0)
    if factor > 1:
        mu = mu[tuple(slice(None, None, factor) for _ in range(img.ndim))]
    mu = np.clip(mu, 0.0, 1.0)
    spacing = tuple(s * factor for s in img.domain.spacing)
    return FuzzyImage(GridDomain(mu.shape, spacing), np.ascontiguousarray(mu))


def robust_normalize(img: FuzzyImage, q: float) -> FuzzyImage:
    """Min-max normalize between the q-th and (100-q)-th percentiles (q in percent)."""
    if not 0.0 <= q < 50.0:
        raise ValueError(f"q must be in [0, 50), got {q}")
    lo, hi = np.percentile(img.membership, [q, 100.0 - q])
    if hi <= lo:
        warnings.warn("degenerate contrast: percentile range is empty", DegenerateContrastWarning)
        return img.with_membership(np.zeros_like(img.membership))
    mu = np.clip((img.membership - lo) / (hi - lo), 0.0, 1.0)
    return img.with_membership(mu)


def histogram_equalize(img: FuzzyImage, bins: int = 256) -> FuzzyImage:
    """Map each value to the cumulative histogram mass of its bin."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    mu = img.membership
    idx = np.minimum((mu * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx.ravel(), minlength=bins)
    cdf = np.cumsum(counts) / mu.size
    return img.with_membership(np.clip(cdf[idx], 0.0, 1.0))


def jaccard(mask_a, mask_b) -> float:
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union
