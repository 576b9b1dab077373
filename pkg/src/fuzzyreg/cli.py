"""Command-line entry point.

Exit status: 0 success, 1 usage error, 2 input/parse error, 3 degenerate
run (no usable samples, folding recipe, ...).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, parse_config, preset
from .engine import register
from .image import jaccard
from .objective import TransformPair
from .synth import (PHANTOM_RECIPE, DeformationRecipe, FoldError, generate_deformation, warp_array, warp_image,
                    warp_mask)
from .volumes import ParseError, read_field, read_volume, write_field, write_metrics, write_volume

log = logging.getLogger("fuzzyreg")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_DEGENERATE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DegenerateRun(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _threads(value) -> int:
    if value is None:
        env = os.environ.get("INSPIRE_THREADS")
        if not env:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"INSPIRE_THREADS={env!r} is not an integer") from None
    if value < 1:
        raise UsageError("thread count must be >= 1")
    return value


def _load_config(spec: str):
    """A path to a config file, or the name of a bundled preset."""
    p = Path(spec)
    if p.exists():
        return parse_config(p)
    if p.suffix or os.sep in spec:
        raise ParseError(f"{spec}: no such file")
    return preset(spec)


def cmd_register(args) -> int:
    A = read_volume(args.ref)
    B = read_volume(args.flo)
    if A.ndim != B.ndim:
        raise ParseError("reference and floating images differ in dimensionality")
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    threads = _threads(args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    init = None
    if args.init_forward or args.init_backward:
        if not (args.init_forward and args.init_backward):
            raise UsageError("--init-forward and --init-backward go together")
        init = TransformPair(read_field(args.init_forward), read_field(args.init_backward))

    t0 = time.perf_counter()

    def progress(rec, pair):
        if args.progress and (rec.iteration % args.progress == 0):
            print(f"level {rec.level} iter {rec.iteration}: J={rec.J:.6g} iic={rec.iic_mean:.4g}",
                  file=sys.stderr)

    result = register(A, B, cfg, callback=progress, threads=threads, init=init)
    for lv in result.levels:
        if cfg.levels[lv.level - 1].iterations and lv.degenerate_iterations == cfg.levels[lv.level - 1].iterations:
            raise DegenerateRun(f"level {lv.level}: no iteration had accepted samples on both sides")
    write_field(out / "forward.fld", result.pair.forward)
    write_field(out / "backward.fld", result.pair.backward)
    mu = warp_array(B.membership, A.domain, result.pair.forward.transform, order=1,
                    background=float(np.percentile(B.membership, 0.5)))
    warped = A.with_membership(np.clip(mu, 0.0, 1.0))
    write_volume(out / "warped.hdr", warped, "f32")
    write_metrics(out / "metrics.csv", result.trace)
    print(f"registered in {time.perf_counter() - t0:.1f} s; final J={result.trace[-1].J:.6g}"
          if result.trace else "registered (no iterations)", file=sys.stderr)
    return EXIT_OK


def cmd_warp(args) -> int:
    img = read_volume(args.input)
    field = read_field(args.field)
    grid = read_volume(args.like) if args.like else img
    if field.ndim != img.ndim:
        raise ParseError("field and image dimensionality differ")
    if args.nearest:
        bg = 0.0 if args.background is None else args.background
        order = 0
    else:
        bg = float(np.percentile(img.membership, 0.5)) if args.background is None else args.background
        order = 1
    mu = warp_array(img.membership, grid.domain, field.transform, order=order, background=bg)
    write_volume(args.out, grid.with_membership(np.clip(mu, 0.0, 1.0)), args.dtype)
    return EXIT_OK


def _parse_recipe(text: str, seed: int) -> DeformationRecipe:
    if text == "phantom":
        return DeformationRecipe(PHANTOM_RECIPE, seed)
    try:
        return DeformationRecipe.parse(text, seed)
    except ValueError as exc:
        raise ParseError(f"recipe {text!r}: {exc}") from None


def cmd_synth(args) -> int:
    img = read_volume(args.input)
    recipe = _parse_recipe(args.recipe, args.seed)
    try:
        chain = generate_deformation(img.domain, recipe)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_volume(Path(f"{prefix}_flo.hdr"), warp_image(img, chain, "linear"), "f32")
    if args.mask:
        mask = read_volume(args.mask)
        warped = warp_mask(mask.membership > 0.5, mask.domain, chain)
        write_volume(Path(f"{prefix}_flo_mask.hdr"), mask.with_membership(warped.astype(float)), "u8")
    for k, f in enumerate(chain, 1):
        write_field(Path(f"{prefix}_stage{k}.fld"), f)
    return EXIT_OK


def cmd_eval(args) -> int:
    ref = read_volume(args.ref_mask)
    flo = read_volume(args.flo_mask)
    field = read_field(args.field)
    warped = warp_array(flo.membership > 0.5, ref.domain, field.transform, order=0) > 0.5
    score = jaccard(ref.membership > 0.5, warped)
    lines = [f"jaccard={score!r}"]
    if args.backward:
        from .engine import inverse_inconsistency_report
        rep = inverse_inconsistency_report(TransformPair(field, read_field(args.backward)))
        lines += [f"iic_mean={rep['mean']!r}", f"iic_max={rep['max']!r}", f"iic_std={rep['std']!r}"]
    text = "\n".join(lines) + "\n"
    if args.out and args.out != "-":
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    failures = run_selftest(verbose=not args.quiet)
    return EXIT_OK if failures == 0 else EXIT_DEGENERATE


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fuzzyreg", description="Symmetric deformable registration with alpha-cut distances.")
    p.add_argument("-v", "--verbose", action="store_true", help="log level/iteration summaries")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("register", help="register a floating image to a reference image")
    r.add_argument("--ref", required=True, help="reference volume header (or PGM)")
    r.add_argument("--flo", required=True, help="floating volume header (or PGM)")
    r.add_argument("--config", required=True, help="config file, or preset name (retinal, brain, phantom)")
    r.add_argument("--out-dir", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int, help="worker threads (default: $INSPIRE_THREADS or 1)")
    r.add_argument("--init-forward")
    r.add_argument("--init-backward")
    r.add_argument("--progress", type=int, default=0, metavar="N", help="print every N-th iteration")
    r.set_defaults(func=cmd_register)

    w = sub.add_parser("warp", help="resample an image through a field: out(x) = in(T(x))")
    w.add_argument("--in", dest="input", required=True)
    w.add_argument("--field", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--like", help="volume whose grid the output uses (default: the input grid)")
    w.add_argument("--nearest", action="store_true")
    w.add_argument("--background", type=float)
    w.add_argument("--dtype", default="f32", choices=("u8", "u16", "f32"))
    w.set_defaults(func=cmd_warp)

    s = sub.add_parser("synth", help="deform an image with a random coarse-to-fine B-spline chain")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--recipe", required=True, help="'phantom' or 'count:range,...', e.g. 5:16,9:6,17:3")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out-prefix", required=True)
    s.add_argument("--mask", help="mask volume to warp with nearest-neighbor interpolation")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="Jaccard of a floating mask pulled back through a field")
    e.add_argument("--ref-mask", required=True)
    e.add_argument("--flo-mask", required=True)
    e.add_argument("--field", required=True, help="forward field (reference -> floating)")
    e.add_argument("--backward", help="backward field, for inverse-inconsistency statistics")
    e.add_argument("--out", default="-")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("selftest", help="run the built-in oracle checks")
    t.add_argument("-q", "--quiet", action="store_true")
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (register, warp, synth, eval, selftest)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (ParseError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DegenerateRun, FoldError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


run_cli = main

if __name__ == "__main__":
    sys.exit(main())
