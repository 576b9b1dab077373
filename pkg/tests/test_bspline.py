import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fuzzyreg import oracles
from fuzzyreg.bspline import BSplineField, basis, refine, transform_jacobian_wrt_controls, transform_point


def _random_field(rng, counts=(3, 4), extent=(10.0, 12.0), scale=1.0):
    shape = tuple(c + 3 for c in counts) + (len(counts),)
    return BSplineField(counts, np.zeros(len(counts)), np.array(extent), rng.normal(0, scale, shape))


def test_basis_values():
    assert np.allclose(basis(0.5) * 48, [1, 23, 23, 1], atol=1e-12)
    assert np.allclose(basis(0.0), [1 / 6, 2 / 3, 1 / 6, 0.0], atol=1e-15)


@given(st.floats(0, 1))
def test_partition_of_unity(u):
    b = basis(u)
    assert abs(b.sum() - 1.0) <= 1e-12
    assert np.allclose(b, [oracles.bspline_basis(i, u) for i in range(4)], atol=1e-14)


def test_zero_and_constant_fields():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 10, size=(100, 2))
    z = BSplineField.zeros((4, 4), (10.0, 10.0))
    assert np.array_equal(z.transform(pts), pts)
    c = z.with_coeffs(np.broadcast_to([1.5, -2.0], z.coeffs.shape).copy())
    assert np.allclose(c.displacement(pts), [1.5, -2.0], atol=1e-12)


def test_identity_outside_support():
    f = _random_field(np.random.default_rng(1))
    out = np.array([[-0.1, 5.0], [3.0, 12.0001], [11.0, -3.0]])
    assert np.array_equal(f.transform(out), out)
    assert transform_jacobian_wrt_controls(f, out[0]).weights.size == 0


def test_transform_matches_oracle_3d():
    rng = np.random.default_rng(2)
    f = _random_field(rng, (2, 3, 2), (5.0, 6.0, 4.0))
    pts = rng.uniform(0, 1, size=(30, 3)) * f.extent
    want = [oracles.bspline_transform(f.coeffs, f.counts, f.origin, f.extent, p) for p in pts]
    assert np.allclose(f.transform(pts), want, atol=1e-12)


def test_jacobian_wrt_controls_matches_fd():
    rng = np.random.default_rng(3)
    f = _random_field(rng)
    x = np.array([4.1, 7.3])
    sup = transform_jacobian_wrt_controls(f, x)
    assert sup.weights.size == 16
    assert sup.weights.sum() == pytest.approx(1.0, abs=1e-12)
    flat = f.coeffs.reshape(-1, 2)
    h = 1e-3
    for j, idx in enumerate(sup.flat_indices):
        for k in range(2):
            cp, cm = flat.copy(), flat.copy()
            cp[idx, k] += h
            cm[idx, k] -= h
            fd = (transform_point(f.with_coeffs(cp.reshape(f.coeffs.shape)), x)
                  - transform_point(f.with_coeffs(cm.reshape(f.coeffs.shape)), x)) / (2 * h)
            assert abs(fd[k] - sup.weights[j]) <= 1e-7
            assert abs(fd[1 - k]) <= 1e-7


def test_support_index_convention():
    f = BSplineField.zeros((4,), (8.0,))
    sup = transform_jacobian_wrt_controls(f, [5.0])
    # x = 5 with delta = 2: cell 2, u = 0.5, first control index 2 - 1 = 1
    assert sup.base_index.tolist() == [1]
    assert sup.fractional.tolist() == [0.5]
    assert sup.flat_indices.tolist() == [2, 3, 4, 5]


@pytest.mark.parametrize("counts", [(3, 4), (2, 2, 3)])
def test_dyadic_refine_exact(counts):
    rng = np.random.default_rng(4)
    extent = tuple(float(3 * c) for c in counts)
    f = _random_field(rng, counts, extent)
    g, rep = refine(f, tuple(2 * c for c in counts))
    pts = rng.uniform(0, 1, size=(500, len(counts))) * f.extent
    d = f.displacement(pts)
    rel = np.sqrt(np.mean((g.displacement(pts) - d) ** 2)) / np.sqrt(np.mean(d**2))
    assert rel <= 1e-6
    assert rep.rms_residual <= 1e-6 * np.sqrt(np.mean(d**2))


def test_refine_same_counts_is_identity():
    f = _random_field(np.random.default_rng(5))
    g, _ = refine(f, f.counts)
    assert np.allclose(g.coeffs, f.coeffs, atol=1e-9)


def test_refine_validation():
    f = _random_field(np.random.default_rng(6))
    with pytest.raises(ValueError):
        refine(f, (2, 4))
    with pytest.raises(ValueError):
        refine(f, (6,))


def test_field_validation():
    with pytest.raises(ValueError):
        BSplineField((3,), [0.0], [5.0], np.zeros((5, 1)))
    with pytest.raises(ValueError):
        BSplineField.zeros((0, 2), (1.0, 1.0))
