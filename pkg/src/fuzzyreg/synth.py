"""Synthetic deformations, image warping and recovery scoring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .bspline import BSplineField
from .image import FuzzyImage, GridDomain, jaccard
from .objective import TransformPair


class FoldError(RuntimeError):
    """Raised when no fold-free deformation was found within the retry budget."""


@dataclass(frozen=True)
class DeformationRecipe:
    """Coarse-to-fine stages of ``(control_points, range)`` plus a seed.

    Each control coordinate of stage ``k`` is perturbed uniformly in
    ``(-range_k, range_k)`` length units.
    """

    stages: tuple[tuple[int, float], ...]
    seed: int = 0

    def __post_init__(self):
        stages = tuple((int(c), float(r)) for c, r in self.stages)
        for c, r in stages:
            if c < 1 or r < 0:
                raise ValueError(f"bad stage ({c}, {r})")
        object.__setattr__(self, "stages", stages)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "DeformationRecipe":
        """``"5:16,9:6,17:3"`` -> three stages."""
        stages = []
        for part in text.replace(" ", "").split(","):
            if part:
                c, r = part.split(":")
                stages.append((int(c), float(r)))
        if not stages:
            raise ValueError("empty recipe")
        return cls(tuple(stages), seed)

    def format(self) -> str:
        return ",".join(f"{c}:{r:g}" for c, r in self.stages)


# scaled analog of the retinal benchmark recipe, for 256x256 images
PHANTOM_RECIPE = ((5, 16.0), (9, 6.0), (17, 3.0))


def chain_transform(chain, points) -> np.ndarray:
    """Apply the stages in order, coarse first."""
    out = np.atleast_2d(np.asarray(points, dtype=np.float64))
    for f in chain:
        out = f.transform(out)
    return out


def _min_jacobian_det(field: BSplineField, domain: GridDomain) -> float:
    pts = domain.grid_points()
    disp = field.displacement(pts).reshape(tuple(domain.sizes) + (domain.ndim,))
    n = domain.ndim
    J = np.empty(tuple(domain.sizes) + (n, n))
    for k in range(n):
        grads = np.gradient(disp[..., k], *domain.spacing)
        for j in range(n):
            J[..., k, j] = grads[j] + (1.0 if j == k else 0.0)
    return float(np.linalg.det(J).min())


def generate_deformation(domain: GridDomain, recipe: DeformationRecipe, max_attempts: int = 10):
    """Random coarse-to-fine chain of fields over the domain's bounding box."""
    chain = []
    for k, (count, rng_range) in enumerate(recipe.stages):
        spacing = domain.extent / count
        if rng_range >= 0.4 * spacing.min():
            raise ValueError(f"stage {k}: range {rng_range} exceeds 0.4 x control spacing {spacing.min():.3g}")
        shape = (count + 3,) * domain.ndim + (domain.ndim,)
        for attempt in range(max_attempts):
            rng = np.random.default_rng([recipe.seed, k, attempt])
            coeffs = rng.uniform(-rng_range, rng_range, size=shape) if rng_range > 0 else np.zeros(shape)
            f = BSplineField((count,) * domain.ndim, np.zeros(domain.ndim), domain.extent, coeffs)
            if rng_range == 0 or _min_jacobian_det(f, domain) > 0:
                chain.append(f)
                break
        else:
            raise FoldError(f"stage {k}: no fold-free field in {max_attempts} attempts")
    return chain


def warp_array(array, domain: GridDomain, mapping, order: int = 1, background: float = 0.0) -> np.ndarray:
    """``out[x] = array(mapping(x))`` on the grid of ``domain`` (backward warping)."""
    pts = domain.grid_points()
    src = mapping(pts) / domain.spacing
    coords = src.T.reshape((domain.ndim,) + tuple(domain.sizes))
    return ndimage.map_coordinates(np.asarray(array, dtype=np.float64), coords, order=order,
                                   mode="constant", cval=background)


def warp_image(img: FuzzyImage, chain, interpolation: str = "linear", background: float | None = None) -> FuzzyImage:
    """Backward-warp ``img`` through ``chain`` (a list of fields or a single field).

    ``background`` defaults to the 0.5 percentile of the image.
    """
    if interpolation not in ("linear", "nearest"):
        raise ValueError("interpolation must be 'linear' or 'nearest'")
    if isinstance(chain, BSplineField):
        chain = [chain]
    if background is None:
        background = float(np.percentile(img.membership, 0.5))
    order = 1 if interpolation == "linear" else 0
    out = warp_array(img.membership, img.domain, lambda p: chain_transform(chain, p), order, background)
    return img.with_membership(np.clip(out, 0.0, 1.0))


def warp_mask(mask, domain: GridDomain, chain) -> np.ndarray:
    if isinstance(chain, BSplineField):
        chain = [chain]
    out = warp_array(np.asarray(mask, dtype=np.float64), domain, lambda p: chain_transform(chain, p), 0, 0.0)
    return out > 0.5


def recovery_score(ref_mask, flo_mask, pair: TransformPair, domain: GridDomain | None = None) -> dict:
    """Jaccard of the floating mask pulled back through the forward field, plus lattice IIC."""
    from .engine import inverse_inconsistency_report

    ref_mask = np.asarray(ref_mask, dtype=bool)
    if domain is None:
        domain = GridDomain(ref_mask.shape, np.ones(ref_mask.ndim))
    warped = warp_mask(flo_mask, domain, pair.forward)
    rep = inverse_inconsistency_report(pair)
    return {"jaccard": jaccard(ref_mask, warped), "iic_mean": rep["mean"], "iic_max": rep["max"]}


def _curve(rng, size, n_ctrl=4):
    """Smooth random curve through ``n_ctrl`` points, densely sampled."""
    pts = rng.uniform(0.1 * size, 0.9 * size, size=(n_ctrl, 2))
    # Catmull-Rom through the points
    P = np.vstack([2 * pts[0] - pts[1], pts, 2 * pts[-1] - pts[-2]])
    seg = []
    for i in range(1, len(P) - 2):
        p0, p1, p2, p3 = P[i - 1], P[i], P[i + 1], P[i + 2]
        L = np.linalg.norm(p2 - p1)
        t = np.linspace(0.0, 1.0, max(2, int(L / 0.1)), endpoint=False)[:, None]
        seg.append(0.5 * ((2 * p1) + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t**2
                          + (-p0 + 3 * p1 - 3 * p2 + p3) * t**3))
    seg.append(P[-2][None])
    return np.vstack(seg)


@dataclass
class Phantom:
    """Analytic thin-structure phantom: densely sampled centerlines with widths.

    Membership at a point is ``clip(w / 2 + 0.5 - d, 0, 1)`` for distance
    ``d`` to a centerline of width ``w`` (maximum over lines); the mask is
    the support of that profile, i.e. every spel the stroke touches.
    """

    curves: list
    widths: list

    def render(self, points):
        points = np.asarray(points, dtype=np.float64)
        mu = np.zeros(len(points))
        mask = np.zeros(len(points), dtype=bool)
        for c, w in zip(self.curves, self.widths):
            d, _ = cKDTree(c).query(points, distance_upper_bound=w + 2)
            mu = np.maximum(mu, np.clip(w / 2 + 0.5 - d, 0.0, 1.0))
            mask |= d < w / 2 + 0.5
        return mu, mask


def random_phantom(size: int = 256, n_lines: int = 6, seed: int = 0, widths=(1.0, 3.0), n_ctrl: int = 6) -> Phantom:
    rng = np.random.default_rng(seed)
    curves, ws = [], []
    for _ in range(n_lines):
        curves.append(_curve(rng, size, n_ctrl))
        ws.append(rng.uniform(*widths))
    return Phantom(curves, ws)


def make_phantom(size: int = 256, n_lines: int = 6, seed: int = 0, widths=(1.0, 3.0)):
    """Antialiased random curved lines on a dark background; returns ``(image, mask)``."""
    ph = random_phantom(size, n_lines, seed, widths)
    grid = GridDomain((size, size), (1.0, 1.0)).grid_points()
    mu, mask = ph.render(grid)
    return FuzzyImage.from_array(mu.reshape(size, size)), mask.reshape(size, size)


@dataclass
class SyntheticPair:
    reference: FuzzyImage
    floating: FuzzyImage
    ref_mask: np.ndarray
    flo_mask: np.ndarray
    chain: list


# offset between deformation seeds when a pair is redrawn for too much initial overlap
REDRAW_SEED_STRIDE = 1_000_003


def make_synthetic_pair(size: int = 256, seed: int = 0, recipe=PHANTOM_RECIPE, n_lines: int = 6,
                        n_ctrl: int = 6, max_initial_jaccard: float | None = None,
                        max_redraws: int = 20) -> SyntheticPair:
    """Phantom plus its deformed copy.

    The floating image is rendered analytically at the deformed coordinates
    (no resampling blur); the floating mask is a nearest-neighbor warp of
    the reference mask, the usual construction for ground-truth labels.

    With ``max_initial_jaccard`` set, the deformation is redrawn (seed
    ``seed + k * REDRAW_SEED_STRIDE``) until the unregistered masks overlap
    by at most that much; the phantom itself is kept.
    """
    ph = random_phantom(size, n_lines, seed, n_ctrl=n_ctrl)
    domain = GridDomain((size, size), (1.0, 1.0))
    grid = domain.grid_points()
    shape = (size, size)
    mu, mask = ph.render(grid)
    mask = mask.reshape(shape)
    for k in range(max_redraws + 1):
        chain = generate_deformation(domain, DeformationRecipe(recipe, seed + k * REDRAW_SEED_STRIDE))
        flo_mask = warp_mask(mask, domain, chain)
        if max_initial_jaccard is None or jaccard(mask, flo_mask) <= max_initial_jaccard:
            break
    else:
        raise RuntimeError(f"no deformation with initial Jaccard <= {max_initial_jaccard} in {max_redraws} redraws")
    mu_f, _ = ph.render(chain_transform(chain, grid))
    return SyntheticPair(FuzzyImage.from_array(mu.reshape(shape)), FuzzyImage.from_array(mu_f.reshape(shape)),
                         mask, flo_mask, chain)
