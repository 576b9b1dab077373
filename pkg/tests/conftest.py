import time

import numpy as np
import pytest

from fuzzyreg.config import preset
from fuzzyreg.engine import register
from fuzzyreg.image import jaccard
from fuzzyreg.synth import make_synthetic_pair, recovery_score, warp_mask

PHANTOM_SEEDS = range(10)
HIT_LEVEL = 0.85
HIT_EVERY = 5  # iterations between Jaccard probes while recording time-to-target
MAX_INITIAL = 0.3  # suite precondition on the unregistered overlap

ARMS = {
    "default": lambda cfg: cfg,
    "lambda0": lambda cfg: cfg.replace(lam=0.0),
    "m0": lambda cfg: cfg.replace_levels(gw_m=0.0),
}

_criteria: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    _criteria[number] = (bool(ok), detail)
    print(f"[criterion {number}] {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok, detail = _criteria[n]
        terminalreporter.write_line(f"[criterion {n}] {'PASS' if ok else 'FAIL'}  {detail}")


def run_phantom(arm: str, seed: int) -> dict:
    """One desk-scale phantom registration, with the iteration count at which Jaccard first reaches 0.85."""
    pair = make_synthetic_pair(256, seed, max_initial_jaccard=MAX_INITIAL)
    cfg = ARMS[arm](preset("phantom")).replace(seed=seed)
    domain = pair.reference.domain
    state = {"n": 0, "hit": None, "probe": 0.0}

    def probe(rec, tp):
        state["n"] += 1
        if state["hit"] is None and state["n"] % HIT_EVERY == 0:
            t = time.perf_counter()
            if jaccard(pair.ref_mask, warp_mask(pair.flo_mask, domain, tp.forward)) >= HIT_LEVEL:
                state["hit"] = state["n"]
            state["probe"] += time.perf_counter() - t

    t0 = time.perf_counter()
    res = register(pair.reference, pair.floating, cfg, callback=probe)
    elapsed = time.perf_counter() - t0 - state["probe"]  # registration time only
    score = recovery_score(pair.ref_mask, pair.flo_mask, res.pair)
    return {
        "initial": jaccard(pair.ref_mask, pair.flo_mask),
        "jaccard": score["jaccard"],
        "iic": score["iic_mean"],
        "hit": state["hit"] if state["hit"] is not None else np.inf,
        "seconds": elapsed,
    }


class PhantomRuns:
    def __init__(self):
        self._cache = {}

    def arm(self, name: str) -> list[dict]:
        if name not in self._cache:
            self._cache[name] = [run_phantom(name, s) for s in PHANTOM_SEEDS]
        return self._cache[name]


@pytest.fixture(scope="session")
def phantom_runs():
    return PhantomRuns()
