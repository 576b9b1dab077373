"""Quick oracle checks runnable from the command line (``fuzzyreg selftest``)."""
from __future__ import annotations

import numpy as np

from . import oracles
from .bspline import BSplineField, basis
from .image import FuzzyImage, FuzzyPoint
from .kdtree import SearchParams, build_tree, mc_distance_gradient, search
from .samplers import KroneckerSequence, cmf_search


def _kdtree(rng) -> bool:
    for _ in range(20):
        shape = tuple(rng.integers(3, 12, size=rng.integers(2, 4)))
        mu = np.round(rng.random(shape) * 8) / 8
        img = FuzzyImage.from_array(mu, rng.uniform(0.5, 2.0, size=len(shape)))
        tree = build_tree(img)
        pts = rng.uniform(-1, 1.2, size=(10, len(shape))) * img.domain.extent
        alpha = rng.uniform(0.01, 1.0)
        got = search(tree, pts, alpha, 5.0)
        want = [oracles.scan_distance(mu, img.domain.spacing, p, alpha, 5.0) for p in pts]
        if not np.allclose(got, want, rtol=0, atol=1e-12):
            return False
    return True


def _estimator(rng) -> bool:
    mu = np.round(rng.random((6, 6)) * 4) / 4
    img = FuzzyImage.from_array(mu)
    tree, ctree = build_tree(img), build_tree(img.complement())
    p = np.array([2.0, 3.0])
    want = oracles.exact_bidirectional(mu, np.ones(2), p, 0.6, 100.0)
    got = mc_distance_gradient(FuzzyPoint(p, 0.6), tree, ctree, SearchParams(n_alpha=4096, d_max=100.0)).value
    return abs(got - want) < 1e-2 * max(1.0, want)


def _bspline(rng) -> bool:
    u = rng.random(50)
    if not np.allclose([basis(x).sum() for x in u], 1.0, atol=1e-12):
        return False
    f = BSplineField((3, 4), [0, 0], [10, 12], rng.normal(size=(6, 7, 2)))
    x = rng.uniform(0, 10, size=(20, 2)) * [1, 1.2]
    want = np.array([oracles.bspline_transform(f.coeffs, f.counts, f.origin, f.extent, p) for p in x])
    outside = np.array([[-1.0, 3.0], [5.0, 12.5]])
    return np.allclose(f.transform(x), want, atol=1e-12) and np.array_equal(f.transform(outside), outside)


def _samplers(rng) -> bool:
    seq = KroneckerSequence((10,))
    if seq.points([1, 2])[:, 0].tolist() != [6, 2]:
        return False
    if any(seq.points([i])[0, 0] != oracles.kronecker_1d(i, 10) for i in range(200)):
        return False
    cmf = np.cumsum([0.2, 0.5, 0.3])
    u = rng.random(1000)
    return all(cmf_search(cmf, x) == oracles.linear_cmf_search(cmf, x) for x in u)


CHECKS = {
    "kd-tree search vs linear scan": _kdtree,
    "Monte Carlo distance vs level sweep": _estimator,
    "B-spline evaluation and partition of unity": _bspline,
    "Kronecker and CMF samplers": _samplers,
}


def run_selftest(verbose: bool = True, seed: int = 0) -> int:
    failures = 0
    for name, check in CHECKS.items():
        ok = bool(check(np.random.default_rng(seed)))
        failures += not ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return failures
