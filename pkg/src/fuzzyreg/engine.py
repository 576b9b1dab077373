"""Coarse-to-fine registration driver: pyramid, samplers, SGDM, grid refinement."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bspline import BSplineField, refine
from .config import LevelConfig, RegistrationConfig
from .image import FuzzyImage, gaussian_pyramid_level, histogram_equalize, robust_normalize
from .kdtree import SearchParams
from .objective import Evaluation, ObjectiveContext, SampleSet, TransformPair, evaluate_objective
from .samplers import MixtureSampler, build_gradient_weighted

log = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    velocity_forward: np.ndarray
    velocity_backward: np.ndarray
    step_size: float
    momentum: float
    iteration: int = 0
    rejected: int = 0

    @classmethod
    def fresh(cls, pair: TransformPair, step_size: float, momentum: float) -> "OptimizerState":
        return cls(np.zeros_like(pair.forward.coeffs), np.zeros_like(pair.backward.coeffs), step_size, momentum)


def sgdm_step(state: OptimizerState, pair: TransformPair, grad_forward, grad_backward) -> TransformPair:
    """Heavy-ball update ``v <- mu v + g``; ``phi <- phi - step v``.

    A non-finite gradient leaves parameters and velocity untouched and bumps
    ``state.rejected``.
    """
    gf = np.asarray(grad_forward)
    gb = np.asarray(grad_backward)
    if gf.shape != state.velocity_forward.shape or gb.shape != state.velocity_backward.shape:
        raise ValueError("gradient shape does not match optimizer state")
    state.iteration += 1
    if not (np.all(np.isfinite(gf)) and np.all(np.isfinite(gb))):
        state.rejected += 1
        return pair
    state.velocity_forward = state.momentum * state.velocity_forward + gf
    state.velocity_backward = state.momentum * state.velocity_backward + gb
    return TransformPair(
        pair.forward.with_coeffs(pair.forward.coeffs - state.step_size * state.velocity_forward),
        pair.backward.with_coeffs(pair.backward.coeffs - state.step_size * state.velocity_backward),
    )


@dataclass
class IterationRecord:
    level: int
    iteration: int
    J: float
    amd_forward: float
    amd_backward: float
    iic_mean: float
    wall_ms: float
    skipped: bool = False


@dataclass
class LevelDiagnostics:
    level: int
    refine_rms: float
    J_before_refine: float
    J_after_refine: float
    degenerate_iterations: int
    rejected_iterations: int


@dataclass
class RegistrationResult:
    pair: TransformPair
    trace: list[IterationRecord] = field(default_factory=list)
    levels: list[LevelDiagnostics] = field(default_factory=list)


def inverse_inconsistency_report(pair: TransformPair, step: float = 1.0) -> dict:
    """Mean/max/std of the round-trip error on a regular lattice over the forward support."""
    f = pair.forward
    axes = [f.origin[j] + np.arange(0.0, f.extent[j] + 1e-9, step) for j in range(f.ndim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    back = pair.backward.transform(pair.forward.transform(pts))
    vals = 0.5 * np.sum((back - pts) ** 2, axis=1)
    return {"mean": float(vals.mean()), "max": float(vals.max()), "std": float(vals.std()), "count": int(vals.size)}


def symmetric_iic(pair: TransformPair, step: float = 1.0) -> float:
    """Average of the lattice IIC mean in both directions."""
    return 0.5 * (inverse_inconsistency_report(pair, step)["mean"]
                  + inverse_inconsistency_report(pair.swapped(), step)["mean"])


def preprocess(img: FuzzyImage, level: LevelConfig, cfg: RegistrationConfig) -> FuzzyImage:
    out = gaussian_pyramid_level(img, level.sigma, level.subsample_factor)
    out = robust_normalize(out, cfg.normalize_q)
    if cfg.hist_eq:
        out = histogram_equalize(out, cfg.hist_bins)
    return out


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


def _draw(sampler: MixtureSampler, rng: np.random.Generator, count: int) -> SampleSet:
    pts, w = sampler.draw(rng, count)
    return SampleSet(pts, w, rng.random(count))


class Registration:
    """One registration job; owns the worker pool for batch-parallel evaluation."""

    def __init__(self, A: FuzzyImage, B: FuzzyImage, cfg: RegistrationConfig, threads: int = 1,
                 batch_size: int = 128,
                 callback: Callable[[IterationRecord, TransformPair], None] | None = None):
        if A.ndim != B.ndim:
            raise ValueError("images must have the same dimensionality")
        if np.any(A.domain.extent <= 0) or np.any(B.domain.extent <= 0):
            raise ValueError("images need at least two spels along every axis")
        self.A, self.B, self.cfg = A, B, cfg
        self.threads = max(1, int(threads))
        self.batch_size = batch_size
        self.callback = callback

    def _initial_pair(self, level: LevelConfig) -> TransformPair:
        n = self.A.ndim
        c = level.controls_for(n)
        return TransformPair(BSplineField.zeros(c, self.A.domain.extent),
                             BSplineField.zeros(c, self.B.domain.extent))

    def _context(self, level: LevelConfig) -> ObjectiveContext:
        cfg = self.cfg
        A = preprocess(self.A, level, cfg)
        B = preprocess(self.B, level, cfg)
        diameter = max(self.A.domain.diameter, self.B.domain.diameter)
        d_max = level.d_max_over_diameter * diameter
        search = SearchParams(n_alpha=cfg.n_alpha, d_max=d_max, beta=cfg.beta, d_t=min(cfg.d_t, d_max))
        return ObjectiveContext.build(A, B, lam=cfg.lam, search=search, eps=cfg.eps)

    def run(self, init: TransformPair | None = None) -> RegistrationResult:
        pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        try:
            return self._run(init, pool)
        finally:
            if pool is not None:
                pool.shutdown()

    def _evaluate(self, ctx, pair, sA, sB, pool) -> Evaluation:
        return evaluate_objective(ctx, pair, sA, sB, threads=self.threads, batch_size=self.batch_size,
                                  executor=pool)

    def _run(self, init, pool) -> RegistrationResult:
        cfg = self.cfg
        n = self.A.ndim
        pair = init if init is not None else self._initial_pair(cfg.levels[0])
        result = RegistrationResult(pair)
        prev = None  # (ctx, samples) of the previous level for the hand-off diagnostic
        for li, level in enumerate(cfg.levels):
            counts = level.controls_for(n)
            refine_rms = 0.0
            J_before = J_after = math.nan
            if pair.forward.counts != counts or pair.backward.counts != counts:
                fwd, rep_f = refine(pair.forward, counts, cfg.fit_density)
                bwd, rep_b = refine(pair.backward, counts, cfg.fit_density)
                refine_rms = max(rep_f.rms_residual, rep_b.rms_residual)
                if prev is not None:
                    J_before = self._evaluate(prev[0], pair, prev[1], prev[2], pool).J
                    J_after = self._evaluate(prev[0], TransformPair(fwd, bwd), prev[1], prev[2], pool).J
                pair = TransformPair(fwd, bwd)
            ctx = self._context(level)
            samp_A = MixtureSampler(ctx.A.domain.sizes, level.gw_m,
                                    build_gradient_weighted(ctx.A, level.gw_sigma, cfg.t_gm))
            samp_B = MixtureSampler(ctx.B.domain.sizes, level.gw_m,
                                    build_gradient_weighted(ctx.B, level.gw_sigma, cfg.t_gm))
            count_A = max(1, round(level.sampling_fraction * ctx.A.domain.size / 2))
            count_B = max(1, round(level.sampling_fraction * ctx.B.domain.size / 2))
            state = OptimizerState.fresh(pair, level.step_size, level.momentum)
            degenerate = 0
            sA = sB = None
            for it in range(level.iterations):
                t0 = time.perf_counter()
                sA = _draw(samp_A, _stream(cfg.seed, li, it, 0), count_A)
                sB = _draw(samp_B, _stream(cfg.seed, li, it, 1), count_B)
                ev = self._evaluate(ctx, pair, sA, sB, pool)
                if ev.degenerate:
                    degenerate += 1
                else:
                    pair = sgdm_step(state, pair, ev.scaled_forward, ev.scaled_backward)
                rec = IterationRecord(li + 1, it + 1, ev.J, ev.amd_forward, ev.amd_backward, ev.iic_mean,
                                      1000.0 * (time.perf_counter() - t0), ev.degenerate)
                result.trace.append(rec)
                if self.callback is not None:
                    self.callback(rec, pair)
            if sA is not None:
                prev = (ctx, sA, sB)
            result.levels.append(LevelDiagnostics(li + 1, refine_rms, J_before, J_after, degenerate,
                                                  state.rejected))
            log.info("level %d done: J=%.4g", li + 1, result.trace[-1].J if result.trace else math.nan)
        result.pair = pair
        return result


def register(A: FuzzyImage, B: FuzzyImage, cfg: RegistrationConfig, callback=None, threads: int = 1,
             init: TransformPair | None = None) -> RegistrationResult:
    """Register A (reference) and B (floating); ``result.pair.forward`` maps A space into B space."""
    return Registration(A, B, cfg, threads=threads, callback=callback).run(init)
