import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fuzzyreg import oracles
from fuzzyreg.image import FuzzyImage
from fuzzyreg.samplers import (KroneckerSequence, MixtureSampler, alpha_sequence, build_gradient_weighted,
                               cmf_search, generalized_golden_ratio, kronecker_increments, kronecker_next)


def test_golden_ratios():
    assert generalized_golden_ratio(1) == pytest.approx((1 + 5**0.5) / 2, abs=1e-15)
    # plastic number, real root of x^3 = x + 1
    assert generalized_golden_ratio(2) == pytest.approx(1.3247179572447460, abs=1e-15)
    assert np.allclose(kronecker_increments(2), [0.754878, 0.569840], atol=1e-6)
    for n in range(1, 6):
        phi = generalized_golden_ratio(n)
        assert phi ** (n + 1) == pytest.approx(phi + 1, abs=1e-12)


def test_kronecker_examples():
    seq = KroneckerSequence((10,))
    assert kronecker_next(seq, 0).tolist() == [0]
    assert kronecker_next(seq, 1).tolist() == [6]
    assert kronecker_next(seq, 2).tolist() == [2]
    assert KroneckerSequence((7, 9)).points([0]).tolist() == [[0, 0]]
    with pytest.raises(ValueError):
        kronecker_next(seq, -1)


def test_kronecker_against_closed_form():
    seq = KroneckerSequence((37,))
    got = seq.points(np.arange(500))[:, 0]
    assert got.tolist() == [oracles.kronecker_1d(i, 37) for i in range(500)]


@pytest.mark.parametrize("N", [3, 5, 10, 64, 101])
def test_kronecker_coverage(N):
    pts = KroneckerSequence((N,), (0.123,)).points(np.arange(3 * N))[:, 0]
    assert set(pts.tolist()) == set(range(N))


def test_alpha_sequence_range():
    a = alpha_sequence(1000, 0.37)
    assert np.all((a > 0) & (a <= 1))
    assert alpha_sequence(1, 0.0).tolist() == [1.0]


@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=12), st.floats(0, 0.999999))
def test_cmf_search_matches_linear_scan(masses, u):
    cmf = np.cumsum(masses) / np.sum(masses)
    cmf[-1] = 1.0
    assert cmf_search(cmf, u) == oracles.linear_cmf_search(cmf, u)


def test_cmf_three_atoms_chi_square():
    probs = np.array([0.2, 0.3, 0.5])
    u = np.random.default_rng(7).random(10**6)
    counts = np.bincount(cmf_search(np.cumsum(probs), u), minlength=3)
    assert oracles.chi_square_pvalue(counts, probs) > 1e-3


def test_gradient_weighted_constant_is_degenerate():
    gw = build_gradient_weighted(FuzzyImage.from_array(np.full((8, 8), 0.5)), 1.0)
    assert gw.degenerate
    draws, w = MixtureSampler((8, 8), 1.0, gw).draw(np.random.default_rng(0), 50)
    assert draws.shape == (50, 2) and np.all(w == 1)


def test_gradient_weighted_step_edge_band():
    mu = np.zeros((64, 64))
    mu[:, 32:] = 1.0
    sigma = 1.5
    gw = build_gradient_weighted(FuzzyImage.from_array(mu), sigma)
    assert gw.probabilities.sum() == pytest.approx(1.0, abs=1e-9)
    cols = np.unravel_index(gw.indices, (64, 64))[1]
    centre = 31.5
    outside = np.abs(cols - centre) > 4 * sigma
    assert gw.probabilities[outside].sum() < 1e-3


def test_mixture_components():
    rng = np.random.default_rng(3)
    mu = np.zeros((20, 20))
    mu[5:9, 5:9] = 1
    gw = build_gradient_weighted(FuzzyImage.from_array(mu), 1.0, threshold=1e-3)
    support = set(gw.indices.tolist())
    pts, _ = MixtureSampler((20, 20), 1.0, gw).draw(rng, 500)
    flat = np.ravel_multi_index(pts.T, (20, 20))
    assert set(flat.tolist()) <= support
    # m = 0: a Kronecker walk from the drawn phase
    rng1, rng2 = np.random.default_rng(5), np.random.default_rng(5)
    pts0, _ = MixtureSampler((20, 20), 0.0, gw).draw(rng1, 40)
    phase = rng2.random(2)
    assert np.array_equal(pts0, KroneckerSequence((20, 20), tuple(phase)).points(np.arange(40)))


def test_mixture_determinism():
    gw = build_gradient_weighted(FuzzyImage.from_array(np.random.default_rng(1).random((16, 16))), 1.0)
    s = MixtureSampler((16, 16), 0.5, gw)
    a, _ = s.draw(np.random.default_rng(9), 300)
    b, _ = s.draw(np.random.default_rng(9), 300)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        MixtureSampler((4,), 1.5)
