import numpy as np
import pytest

from fuzzyreg.bspline import BSplineField
from fuzzyreg.config import LevelConfig, RegistrationConfig
from fuzzyreg.engine import (OptimizerState, inverse_inconsistency_report, register, sgdm_step,
                             symmetric_iic)
from fuzzyreg.image import FuzzyImage
from fuzzyreg.objective import TransformPair


def _pair(counts=(2, 2), extent=(10.0, 10.0)):
    z = BSplineField.zeros(counts, extent)
    return TransformPair(z, z)


def _shift(v, counts=(2, 2), extent=(40.0, 40.0)):
    f = BSplineField.zeros(counts, extent)
    return f.with_coeffs(np.broadcast_to(v, f.coeffs.shape).astype(float).copy())


def _disk(n=64, c=(32, 32), r=12):
    yy, xx = np.mgrid[:n, :n]
    return FuzzyImage.from_array((((yy - c[0]) ** 2 + (xx - c[1]) ** 2) <= r * r).astype(float))


# -- optimizer ---------------------------------------------------------------

def test_sgd_without_momentum():
    pair = _pair()
    st = OptimizerState.fresh(pair, 0.5, 0.0)
    g = np.random.default_rng(0).normal(size=pair.forward.coeffs.shape)
    out = sgdm_step(st, pair, g, -g)
    assert np.array_equal(out.forward.coeffs, -0.5 * g)
    assert np.array_equal(out.backward.coeffs, 0.5 * g)


def test_momentum_velocity_limit():
    pair = _pair()
    st = OptimizerState.fresh(pair, 1e-3, 0.9)
    g = np.ones(pair.forward.coeffs.shape)
    for _ in range(400):
        pair = sgdm_step(st, pair, g, g)
    assert np.allclose(st.velocity_forward, 1 / (1 - 0.9), rtol=1e-12)


def test_zero_gradient_is_noop():
    pair = _pair()
    st = OptimizerState.fresh(pair, 1.0, 0.9)
    z = np.zeros(pair.forward.coeffs.shape)
    out = sgdm_step(st, pair, z, z)
    assert np.array_equal(out.forward.coeffs, pair.forward.coeffs)


def test_non_finite_gradient_rejected():
    pair = _pair()
    st = OptimizerState.fresh(pair, 1.0, 0.9)
    g = np.zeros(pair.forward.coeffs.shape)
    g[0, 0, 0] = np.nan
    out = sgdm_step(st, pair, g, np.zeros_like(g))
    assert out is pair and st.rejected == 1 and not st.velocity_forward.any()
    with pytest.raises(ValueError):
        sgdm_step(st, pair, np.zeros(3), np.zeros(3))


# -- inverse-inconsistency report -------------------------------------------

def test_iic_report_trivial():
    rep = inverse_inconsistency_report(_pair())
    assert rep["mean"] == rep["max"] == rep["std"] == 0.0
    exact = TransformPair(_shift([2.0, -1.0]), _shift([-2.0, 1.0]))
    # lattice points near the upper edge leave the backward support
    inner = inverse_inconsistency_report(exact, step=5.0)
    assert inner["mean"] < 1.0
    assert symmetric_iic(TransformPair(_shift([0.0, 0.0]), _shift([0.0, 0.0]))) == 0.0


def test_iic_report_constant_mismatch():
    rep = inverse_inconsistency_report(TransformPair(_shift([3.0, 4.0], extent=(100.0, 100.0)),
                                                     BSplineField.zeros((2, 2), (100.0, 100.0))), step=10.0)
    # every lattice point within the support has round-trip error 12.5
    assert rep["max"] == pytest.approx(12.5)


# -- registration ------------------------------------------------------------

def _cfg(levels, **kw):
    kw.setdefault("normalize_q", 0.0)
    return RegistrationConfig(levels=tuple(levels), **kw)


def test_self_registration_stays_at_identity():
    rng = np.random.default_rng(0)
    from scipy import ndimage
    a = ndimage.gaussian_filter(rng.random((48, 48)), 2.0)
    A = FuzzyImage.from_array((a - a.min()) / (a.max() - a.min()))
    cfg = _cfg([LevelConfig(1, 0.0, (5,), 50, 0.1, 0.1, 0.5, 0.9)])
    res = register(A, A, cfg)
    pts = A.domain.grid_points()
    disp = np.linalg.norm(res.pair.forward.displacement(pts), axis=1)
    assert disp.mean() <= 0.1
    assert len(res.trace) == 50


def test_translated_disk_recovered():
    A, B = _disk(), _disk(c=(32, 37))
    cfg = _cfg([LevelConfig(2, 1.0, (4,), 100, 0.1, 0.2, 1.0, 0.9),
                LevelConfig(1, 0.0, (6,), 100, 0.1, 0.1, 0.5, 0.9)])
    res = register(A, B, cfg)
    ang = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    marks = np.stack([32 + 12 * np.sin(ang), 32 + 12 * np.cos(ang)], axis=1)
    err = np.linalg.norm(res.pair.forward.transform(marks) - (marks + [0.0, 5.0]), axis=1)
    assert err.mean() <= 0.5
    back = np.linalg.norm(res.pair.backward.transform(marks + [0.0, 5.0]) - marks, axis=1)
    assert back.mean() <= 0.5


def test_level_handoff_and_diagnostics():
    A, B = _disk(), _disk(c=(33, 36))
    cfg = _cfg([LevelConfig(2, 1.0, (3,), 40, 0.1, 0.2, 1.0, 0.9),
                LevelConfig(1, 0.0, (6,), 10, 0.1, 0.1, 0.5, 0.9)])
    res = register(A, B, cfg)
    lv = res.levels[1]
    assert lv.refine_rms < 1e-6
    assert abs(lv.J_after_refine - lv.J_before_refine) < 0.1 * lv.J_before_refine
    assert [r.level for r in res.trace] == [1] * 40 + [2] * 10
    assert res.levels[0].degenerate_iterations == 0


def test_deterministic_and_thread_independent():
    A, B = _disk(48, (24, 24), 9), _disk(48, (25, 27), 9)
    cfg = _cfg([LevelConfig(1, 0.0, (4,), 20, 0.2, 0.2, 0.5, 0.9)], seed=7)
    r1 = register(A, B, cfg, threads=1)
    r2 = register(A, B, cfg, threads=3)
    assert r1.pair.forward.coeffs.tobytes() == r2.pair.forward.coeffs.tobytes()
    assert r1.pair.backward.coeffs.tobytes() == r2.pair.backward.coeffs.tobytes()
    assert [r.J for r in r1.trace] == [r.J for r in r2.trace]
    r3 = register(A, B, cfg.replace(seed=8))
    assert r3.pair.forward.coeffs.tobytes() != r1.pair.forward.coeffs.tobytes()


def test_callback_and_init():
    A, B = _disk(32, (16, 16), 6), _disk(32, (16, 18), 6)
    cfg = _cfg([LevelConfig(1, 0.0, (3,), 5, 0.2, 0.2, 0.5, 0.9)])
    seen = []
    init = TransformPair(BSplineField.zeros((3, 3), A.domain.extent), BSplineField.zeros((3, 3), B.domain.extent))
    register(A, B, cfg, callback=lambda rec, pair: seen.append((rec.iteration, pair.forward.counts)), init=init)
    assert seen == [(i, (3, 3)) for i in range(1, 6)]


def test_monotone_trend_on_windows():
    """Median J over trailing 50-iteration windows should not rise in most seeded trials."""
    ok = 0
    for seed in range(10):
        A, B = _disk(48, (24, 24), 9), _disk(48, (24 + seed % 3, 27), 9)
        cfg = _cfg([LevelConfig(1, 0.0, (4,), 200, 0.1, 0.2, 0.1, 0.9)], seed=seed)
        J = np.array([r.J for r in register(A, B, cfg).trace])
        med = [np.median(J[k:k + 50]) for k in range(0, 200, 50)]
        ok += all(b <= a for a, b in zip(med, med[1:]))
    assert ok >= 9


def test_mismatched_dimensionality():
    with pytest.raises(ValueError):
        register(FuzzyImage.from_array(np.zeros((4, 4))), FuzzyImage.from_array(np.zeros((4, 4, 4))),
                 _cfg([LevelConfig()]))
