import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fuzzyreg import oracles
from fuzzyreg.image import FuzzyImage, FuzzyPoint
from fuzzyreg.kdtree import (CapacityError, SearchParams, build_tree, mc_alpha_samples, mc_distance_gradient,
                             rect_lower_bound, relaxed_lower_bound, search, split_rect)


def test_build_tree_root_is_max():
    tree = build_tree(FuzzyImage.from_array([[0.1, 0.9], [0.3, 0.2]]))
    assert tree.root == 0.9
    assert tree.gamma == 3


def test_build_tree_odd_sizes_and_capacity():
    rng = np.random.default_rng(0)
    mu = rng.random((5, 7))
    tree = build_tree(FuzzyImage.from_array(mu))
    assert tree.root == mu.max()
    with pytest.raises(CapacityError):
        build_tree(FuzzyImage.from_array(mu), max_entries=16)


def test_split_rect_examples():
    _, y2, R1, R2, k = split_rect((0, 0), (4, 2), (1, 1))
    assert k == 0 and R1.tolist() == [2, 2] and R2.tolist() == [2, 2] and y2.tolist() == [2, 0]
    assert split_rect((0, 0), (2, 2), (1, 3))[4] == 1
    _, _, R1, R2, _ = split_rect((0, 0), (3, 1), (1, 1))
    assert R1.tolist() == [2, 1] and R2.tolist() == [1, 1]
    with pytest.raises(ValueError):
        split_rect((0, 0), (1, 1), (1, 1))


def test_lower_bounds():
    assert rect_lower_bound((0, 0), (3, 4), (1, 1), (1, 1)) == 5.0
    assert rect_lower_bound((5, 0), (0, 0), (3, 1), (2, 1)) == 1.0
    assert rect_lower_bound((1, 0.5), (0, 0), (3, 2), (1, 1)) == 0.0
    assert relaxed_lower_bound((0, 0), (30, 0), (1, 1), (1, 1), 20.0, 1.2) == pytest.approx(32.0)
    assert relaxed_lower_bound((0, 0), (10, 0), (1, 1), (1, 1), 20.0, 1.2) == 10.0
    with pytest.raises(ValueError):
        relaxed_lower_bound((0, 0), (1, 1), (1, 1), (1, 1), 1.0, 0.5)


def test_search_examples():
    mu = np.zeros((9, 9))
    tree = build_tree(FuzzyImage.from_array(mu))
    assert search(tree, [[4.0, 4.0]], 0.5, 3.0).tolist() == [3.0]  # empty cut saturates
    mu[4, 4] = 1.0
    tree = build_tree(FuzzyImage.from_array(mu))
    assert search(tree, [[4.0, 4.0], [0.0, 1.0]], 0.5, 100.0).tolist() == [0.0, 5.0]


def test_search_beta_bound():
    rng = np.random.default_rng(4)
    mu = rng.random((20, 17)) ** 4
    tree = build_tree(FuzzyImage.from_array(mu))
    pts = rng.uniform(-2, 22, size=(300, 2))
    exact = search(tree, pts, 0.7, 50.0)
    approx = search(tree, pts, 0.7, 50.0, beta=1.5, d_t=2.0)
    assert np.all(approx >= exact - 1e-12)
    assert np.all(approx <= np.minimum(50.0, 2.0 + 1.5 * np.maximum(exact - 2.0, 0) + 1e-9) + 1e-12)


shape2 = st.tuples(st.integers(1, 9), st.integers(1, 9))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, shape2, elements=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])),
       st.floats(0.01, 1.0), st.floats(0.5, 2.0), st.floats(0.5, 2.0))
def test_search_matches_scan(mu, alpha, s0, s1):
    img = FuzzyImage.from_array(mu, (s0, s1))
    tree = build_tree(img)
    pts = np.array([[0.0, 0.0], [3.3, 1.7], [-2.0, 5.0], [9.0, 9.5]])
    got = search(tree, pts, alpha, 6.0)
    want = [oracles.scan_distance(mu, (s0, s1), p, alpha, 6.0) for p in pts]
    assert np.array_equal(got, want)


def test_search_3d():
    rng = np.random.default_rng(2)
    mu = rng.random((4, 5, 6)) ** 2
    tree = build_tree(FuzzyImage.from_array(mu, (1.0, 0.7, 1.3)))
    pts = rng.uniform(-1, 7, size=(40, 3))
    got = search(tree, pts, 0.6, 4.0)
    want = [oracles.scan_distance(mu, (1.0, 0.7, 1.3), p, 0.6, 4.0) for p in pts]
    assert np.array_equal(got, want)


def _pair(mu):
    img = FuzzyImage.from_array(mu)
    return build_tree(img), build_tree(img.complement())


def test_mc_on_spel_matches_level_sweep():
    mu = np.round(np.random.default_rng(1).random((8, 8)) * 4) / 4
    tree, ctree = _pair(mu)
    for h in (0.0, 0.4, 1.0):
        p = np.array([3.0, 5.0])
        want = oracles.exact_bidirectional(mu, (1, 1), p, h, 100.0)
        got = mc_distance_gradient(FuzzyPoint(p, h), tree, ctree, SearchParams(n_alpha=4096, d_max=100.0))
        assert got.inside
        assert got.value == pytest.approx(want, abs=5e-3)


def test_mc_interpolates_corners():
    mu = np.round(np.random.default_rng(6).random((6, 6)) * 4) / 4
    tree, ctree = _pair(mu)
    p = np.array([2.3, 1.6])
    params = SearchParams(n_alpha=2048, d_max=100.0)
    got = mc_distance_gradient(FuzzyPoint(p, 0.5), tree, ctree, params).value
    assert got == pytest.approx(oracles.exact_bidirectional_interp(mu, (1, 1), p, 0.5, 100.0), abs=1e-2)
    assert got == pytest.approx(mc_alpha_samples(FuzzyPoint(p, 0.5), tree, ctree, params).mean(), abs=1e-12)


def test_mc_outside_domain_rejected():
    tree, ctree = _pair(np.ones((4, 4)))
    out = mc_distance_gradient(FuzzyPoint(np.array([-0.5, 1.0]), 1.0), tree, ctree, SearchParams())
    assert not out.inside and out.value == 0.0


@pytest.mark.parametrize("mode", ["midpoint", "interpolant"])
def test_mc_gradient_points_toward_object(mode):
    mu = np.zeros((16, 16))
    mu[8, 8] = 1.0
    tree, ctree = _pair(mu)
    out = mc_distance_gradient(FuzzyPoint(np.array([4.3, 8.0]), 1.0), tree, ctree,
                               SearchParams(n_alpha=16, gradient=mode))
    # distance decreases when moving toward (8, 8)
    assert out.gradient[0] < 0


def test_interpolant_gradient_matches_fd():
    rng = np.random.default_rng(3)
    mu = np.round(rng.random((10, 10)) * 8) / 8
    tree, ctree = _pair(mu)
    params = SearchParams(n_alpha=9, gradient="interpolant", alpha_seed=0.3)
    p = np.array([4.37, 5.21])
    g = mc_distance_gradient(FuzzyPoint(p, 0.55), tree, ctree, params).gradient
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (mc_distance_gradient(FuzzyPoint(p + e, 0.55), tree, ctree, params).value
              - mc_distance_gradient(FuzzyPoint(p - e, 0.55), tree, ctree, params).value) / (2 * h)
        assert g[k] == pytest.approx(fd, abs=1e-6)


def test_search_params_validation():
    with pytest.raises(ValueError):
        SearchParams(n_alpha=0)
    with pytest.raises(ValueError):
        SearchParams(beta=0.9)
    with pytest.raises(ValueError):
        SearchParams(d_max=5.0, d_t=6.0)
    with pytest.raises(ValueError):
        SearchParams(gradient="central")
