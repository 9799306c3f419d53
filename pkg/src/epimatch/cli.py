"""Command-line entry point: ``epimatch {synth,match,bench,sweep,dump-tree}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .angular_index import build_index
from .errors import EpimatchError, EpipoleAtInfinity
from .geometry import epipole_of
from .io import read_scene, write_matches, write_scene
from .matching import GUIDED_METHODS, METHODS, MatchConfig, match
from .synth import REGIMES, classify_epipole, synth_scene

DEFAULT_SEED = 7


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def _non_negative(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
        if v < 0:
            raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
        return v
    return parse


def _tau(text):
    v = _positive(float)(text)
    if v > 1:
        raise argparse.ArgumentTypeError("tau must lie in (0, 1]")
    return v


def _list_of(kind):
    def parse(text):
        try:
            vals = [kind(s) for s in text.split(",") if s.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}")
        if not vals:
            raise argparse.ArgumentTypeError("list is empty")
        return vals
    return parse


def _method_list(text):
    vals = [s.strip() for s in text.split(",") if s.strip()]
    bad = [v for v in vals if v not in METHODS]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}; choose from {METHODS}")
    return vals


def _add_scene_args(p, n_default=5000):
    p.add_argument("--n", type=_non_negative(int), default=n_default, help="3D points per scene")
    p.add_argument("--clutter", type=_non_negative(int), default=0, help="clutter keypoints per image")
    p.add_argument("--epipole", choices=REGIMES, default="inside", help="epipole regime")
    p.add_argument("--pixel-noise", type=_non_negative(float), default=1.0, help="keypoint noise sigma (px)")
    p.add_argument("--descriptor-noise", type=_non_negative(float), default=0.15)
    p.add_argument("--repetition", type=_positive(int), default=4, help="points sharing one base descriptor")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)


def _add_method_args(p):
    p.add_argument("--bins", type=_positive(int), default=256, help="hash bin count")
    p.add_argument("--neighbor-width", type=_non_negative(int), default=1, help="hash neighbour bins per side")
    p.add_argument("--cell-size", type=_positive(float), default=None, help="grid cell size (default: epsilon)")
    p.add_argument("--threads", type=_positive(int), default=None, help="worker threads (default: all cores)")


def _scene_from_args(args):
    return synth_scene(args.n, args.clutter, descriptor_noise=args.descriptor_noise,
                       pixel_noise_sigma=args.pixel_noise, camera_config=args.epipole,
                       seed=args.seed, repetition=args.repetition)


def _load_or_synth(args):
    return read_scene(args.scene) if getattr(args, "scene", None) else _scene_from_args(args)


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _print_report(report):
    cols = ["method", "parameter", "candidate_ms", "descriptor_ms", "build_ms",
            "candidate_recall", "matching_recall", "match_count", "mean_candidates"]
    print("  ".join(f"{c:>14s}" for c in cols))
    for r in report.rows:
        print("  ".join(f"{_fmt(getattr(r, c)):>14s}" for c in cols))


# --------------------------------------------------------------------------
# commands


def cmd_synth(args):
    scene = _scene_from_args(args)
    out = write_scene(scene, args.out)
    ex, ey = scene.epipole.pixel
    w, h = scene.image_size
    print(f"wrote {out}: {len(scene.keypoints1)} + {len(scene.keypoints2)} keypoints, "
          f"{scene.ground_truth.shape[0]} true pairs")
    print(f"epipole ({ex:.1f}, {ey:.1f}) regime {classify_epipole(ex, ey, w, h)}")
    return 0


def cmd_match(args):
    scene = read_scene(args.scene)
    cfg = MatchConfig(epsilon=args.epsilon, tau=args.tau, filter=args.filter, method=args.method,
                      bins=args.bins, neighbor_width=args.neighbor_width, cell_size=args.cell_size,
                      image_size=scene.image_size, threads=args.threads)
    f = scene.fundamental
    harness.warmup()
    matches, timing = match(scene.keypoints1, scene.keypoints2, f, cfg)
    out = Path(args.out) if args.out else Path(args.scene) / f"matches_{args.method}.csv"
    write_matches(out, matches)
    print(f"method {args.method}  epsilon {args.epsilon}  matches {len(matches)}  -> {out}")
    print(f"candidate_ms {timing.candidate_generation:.3f}  descriptor_ms {timing.descriptor_matching:.3f}  "
          f"build_ms {timing.index_build:.3f}")
    if timing.skipped_queries:
        print(f"skipped queries {timing.skipped_queries}")
    if scene.ground_truth.size:
        print(f"matching_recall {harness.matching_recall(matches, scene):.4f}")
    if args.candidate_recall and args.method in GUIDED_METHODS:
        kw = dict(bins=args.bins, neighbor_width=args.neighbor_width, cell_size=args.cell_size)
        oracle = harness.measure_candidates(scene, "brute", args.epsilon, threads=args.threads)
        run = harness.measure_candidates(scene, args.method, args.epsilon, threads=args.threads, **kw)
        total = int(oracle.sizes.sum())
        print(f"candidate_recall {1.0 if total == 0 else int(run.hits.sum()) / total:.6f}")
    return 0


def _sweep_kwargs(args):
    return dict(bins=args.bins, neighbor_width=args.neighbor_width, cell_size=args.cell_size)


def cmd_bench(args):
    scene = _load_or_synth(args)
    report = harness.run_scalability_sweep([(len(scene.keypoints1), scene)], epsilon=args.epsilon,
                                           methods=args.methods, batches=args.batches,
                                           threads=args.threads, **_sweep_kwargs(args))
    report.experiment = "bench"
    for r in report.rows:
        r.experiment = "bench"
    _print_report(report)
    if args.out:
        report.write_csv(args.out)
    return 0


def cmd_sweep(args):
    kw = _sweep_kwargs(args)
    if args.sweep == "tolerance":
        scene = _load_or_synth(args)
        methods = [m for m in args.methods if m != "unguided"]
        report = harness.run_tolerance_sweep(scene, args.epsilons, methods, threads=args.threads, **kw)
    elif args.sweep == "scale":
        family = harness.scene_family(args.n, seed=args.seed, camera_config=args.epipole,
                                      n_clutter=args.clutter, pixel_noise_sigma=args.pixel_noise,
                                      descriptor_noise=args.descriptor_noise, repetition=args.repetition)
        report = harness.run_scalability_sweep(family, epsilon=args.epsilon, methods=args.methods,
                                               batches=args.batches, threads=args.threads, **kw)
    else:
        scene = _load_or_synth(args)
        report = harness.run_noise_sweep(scene, args.levels, epsilon=args.epsilon, seed=args.seed,
                                         methods=args.methods, trials=args.trials, threads=args.threads, **kw)
    _print_report(report)
    out = args.out or f"{args.sweep}.csv"
    report.write_csv(out)
    print(f"-> {out}")
    return 0


def cmd_dump_tree(args):
    scene = read_scene(args.scene)
    index = build_index(scene.keypoints2.positions, epipole_of(scene.fundamental), args.epsilon)
    index.audit()
    doc = index.to_dict()
    doc["audit"] = "ok"
    text = json.dumps(doc, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"depth {index.depth}, {index.node_count} nodes, {index.interval_count} intervals -> {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epimatch", description="Exact epipolar-guided keypoint matching")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    _add_scene_args(p)
    p.add_argument("out", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="match one scene with one method")
    p.add_argument("scene", help="scene directory")
    p.add_argument("--method", choices=METHODS, default="angular")
    p.add_argument("--epsilon", type=_positive(float), default=50.0)
    p.add_argument("--tau", type=_tau, default=0.8)
    p.add_argument("--filter", choices=("ratio", "nearest"), default="ratio")
    p.add_argument("--out", help="match CSV (default: <scene>/matches_<method>.csv)")
    p.add_argument("--candidate-recall", action="store_true",
                   help="also report candidate recall against brute force")
    _add_method_args(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("bench", help="time every method on one scene")
    p.add_argument("--scene", help="scene directory (default: generate one)")
    _add_scene_args(p)
    p.add_argument("--epsilon", type=_positive(float), default=50.0)
    p.add_argument("--methods", type=_method_list, default=["angular", "hash", "grid", "brute"])
    p.add_argument("--batches", type=_positive(int), default=harness.DEFAULT_BATCHES)
    p.add_argument("--out", help="report CSV")
    _add_method_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="run an experiment sweep and write a report CSV")
    p.add_argument("sweep", choices=("tolerance", "scale", "noise"))
    p.add_argument("--scene", help="scene directory (tolerance/noise; default: generate one)")
    p.add_argument("--n", type=_list_of(int), default=None,
                   help="point count; a comma list for the scale sweep")
    p.add_argument("--clutter", type=_non_negative(int), default=0)
    p.add_argument("--epipole", choices=REGIMES, default=None)
    p.add_argument("--pixel-noise", type=_non_negative(float), default=1.0)
    p.add_argument("--descriptor-noise", type=_non_negative(float), default=0.15)
    p.add_argument("--repetition", type=_positive(int), default=4)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--epsilon", type=_positive(float), default=None)
    p.add_argument("--epsilons", type=_list_of(float), default=list(harness.DEFAULT_EPSILONS))
    p.add_argument("--levels", type=_list_of(float), default=list(harness.DEFAULT_LEVELS))
    p.add_argument("--trials", type=_positive(int), default=1, help="pose draws per noise level")
    p.add_argument("--methods", type=_method_list, default=None)
    p.add_argument("--batches", type=_positive(int), default=harness.DEFAULT_BATCHES)
    p.add_argument("--out", help="report CSV (default: <sweep>.csv)")
    _add_method_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-tree", help="write the angular index structure as JSON")
    p.add_argument("scene", help="scene directory")
    p.add_argument("--epsilon", type=_positive(float), default=50.0)
    p.add_argument("--out", help="JSON file (default: stdout)")
    p.set_defaults(func=cmd_dump_tree)
    return ap


def _sweep_defaults(args, ap):
    if args.sweep == "scale":
        args.n = args.n or list(harness.DEFAULT_N_VALUES)
        args.epipole = args.epipole or "outside"
        args.epsilon = args.epsilon or 50.0
        args.methods = args.methods or ["angular", "hash", "grid", "brute"]
    else:
        if args.n is not None and len(args.n) != 1:
            ap.error("--n takes a single value for this sweep")
        args.n = args.n[0] if args.n else (25000 if args.sweep == "tolerance" else 5000)
        args.epipole = args.epipole or "inside"
        if args.sweep == "noise":
            args.epsilon = args.epsilon or 200.0
            args.methods = args.methods or ["angular", "hash", "grid", "brute", "unguided"]
            if args.clutter == 0 and not args.scene:
                args.clutter = args.n // 5
        else:
            args.methods = args.methods or ["angular", "hash", "grid", "brute"]


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "sweep":
        _sweep_defaults(args, ap)
    try:
        return args.func(args)
    except EpipoleAtInfinity as exc:
        print(f"error: {exc}\nhint: the epipole must be finite for the angular and hash methods; "
              "use --method grid or --method brute for this pair.", file=sys.stderr)
        return 1
    except (EpimatchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
