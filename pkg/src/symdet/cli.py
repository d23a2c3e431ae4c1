"""Command-line front end: ``symdet {synth,detect,eval,bench,train}``.

Exit codes: 0 success, 1 usage error, 2 malformed input or generation
failure, 3 no evidence for any plane, 4 missing checkpoint, 5 benchmark
correctness failure.
"""
import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import synth
from .errors import CorrectnessError, GenerationFailedError, NoEvidenceError, SceneFormatError
from .search import STAGE_COUNTS, STAGE_DELTAS, SearchConfig, multi_stage_detect
from .volume import D_MAX, D_MIN, DEPTH_SAMPLES, REDUCERS, DepthSweep

log = logging.getLogger("symdet")

EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NO_EVIDENCE = 3
EXIT_CHECKPOINT = 4
EXIT_CORRECTNESS = 5

RESULT_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("SYMDET_THREADS", "1")))


def scene_seed(seed, index):
    """Seed of the ``index``-th scene of a corpus generated from ``seed``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


# --- synth ---------------------------------------------------------------

def cmd_synth(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.count):
        try:
            scene = synth.generate_scene(scene_seed(args.seed, k), n_pairs=args.pairs,
                                         n_distractors=args.distractors, noise_sigma=args.noise)
        except GenerationFailedError as exc:
            log.error("%s", exc)
            return EXIT_INPUT
        synth.write_scene(scene, out / f"scene_{k}.json")
    print(f"wrote {args.count} scene(s) to {out}")
    return 0


# --- detect --------------------------------------------------------------

def _write_scores(path, scores):
    path.write_text("".join(f"{float(s)!r}\n" for s in scores))


def result_dict(result, cfg, scores_paths, timing_ms):
    return {
        "version": RESULT_VERSION,
        "predicted_normal": [float(x) for x in result.plane.normal],
        "confidence": float(result.confidence),
        "per_stage": [
            {
                "delta_deg": float(st.delta),
                "count": len(st.lattice),
                "argmax_index": int(st.argmax),
                "argmax_normal": [float(x) for x in st.best_normal],
                "scores_path": str(p),
            }
            for st, p in zip(result.per_stage, scores_paths)
        ],
        "timing_ms": timing_ms,
        "config": cfg.as_dict(),
    }


def read_result(path):
    """Load and validate a result file."""
    data = json.loads(Path(path).read_text())
    n = np.asarray(data["predicted_normal"], dtype=np.float64)
    if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise SceneFormatError(f"{path}: predicted_normal is not a unit 3-vector")
    if len(data["per_stage"]) != len(data["config"]["stage_counts"]):
        raise SceneFormatError(f"{path}: stage count does not match config")
    return data


def cmd_detect(args):
    if args.scorer == "edgeconv" and not args.checkpoint:
        log.error("--scorer edgeconv requires --checkpoint")
        return EXIT_CHECKPOINT
    if len(args.stages) != len(args.deltas):
        raise UsageError("--stages and --deltas need the same number of entries")
    try:
        cfg = SearchConfig(args.stages, args.deltas, args.reducer, args.scorer,
                           DepthSweep(args.dmin, args.dmax, args.depth_samples))
    except ValueError as exc:
        raise UsageError(str(exc))

    head = None
    if args.scorer == "edgeconv":
        if not Path(args.checkpoint).is_file():
            log.error("checkpoint %s not found", args.checkpoint)
            return EXIT_CHECKPOINT
        from .scorer import load_checkpoint
        head = load_checkpoint(args.checkpoint)

    try:
        scene = synth.read_scene(args.scene)
    except SceneFormatError as exc:
        log.error("%s", exc)
        return EXIT_INPUT

    t0 = time.perf_counter()
    try:
        result = multi_stage_detect(scene, cfg, threads=_threads(args), head=head)
    except NoEvidenceError as exc:
        log.error("%s", exc)
        return EXIT_NO_EVIDENCE
    timing_ms = (time.perf_counter() - t0) * 1e3

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    scores_paths = []
    for i, st in enumerate(result.per_stage):
        p = out.with_name(f"{out.stem}.stage{i}.scores.txt")
        _write_scores(p, st.scores)
        scores_paths.append(p.name)
    out.write_text(json.dumps(result_dict(result, cfg, scores_paths, timing_ms), indent=2) + "\n")

    n = result.plane.normal
    print(f"normal = ({n[0]:.6f}, {n[1]:.6f}, {n[2]:.6f})  confidence = {result.confidence:.6f}")
    if scene.gt_plane is not None:
        from .hemisphere import angle_between
        print(f"angular error vs ground truth = {float(angle_between(n, scene.gt_plane.normal)):.4f} deg")
    return 0


# --- eval ----------------------------------------------------------------

def _normals_in(directory, key_order):
    files = sorted(p for p in Path(directory).glob("*.json"))
    normals = []
    for p in files:
        data = json.loads(p.read_text())
        for key in key_order:
            if data.get(key) is not None:
                normals.append(np.asarray(data[key], dtype=np.float64))
                break
        else:
            raise SceneFormatError(f"{p} has none of {key_order}")
    return files, normals


def cmd_eval(args):
    from .evaluation import angular_errors, evaluate
    try:
        pred_files, preds = _normals_in(args.pred, ("predicted_normal", "gt_normal"))
        gt_files, gts = _normals_in(args.gt, ("gt_normal",))
    except (SceneFormatError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    if len(pred_files) != len(gt_files) or not pred_files:
        log.error("%d prediction files but %d ground-truth files", len(pred_files), len(gt_files))
        return EXIT_INPUT
    report = evaluate(angular_errors(preds, gts), args.thresholds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(out)
    report.write_curve_csv(out.with_name(f"{out.stem}.curve.csv"))
    for t, v in report.aa.items():
        print(f"AA@{t:g} = {v:.4f}")
    return 0


# --- bench ---------------------------------------------------------------

def cmd_bench(args):
    from .bench import run_bench
    try:
        report = run_bench(args.h, args.w, args.c, args.d, args.planes, args.repeats, _threads(args), args.seed)
    except CorrectnessError as exc:
        log.error("correctness gate failed: %s", exc)
        return EXIT_CORRECTNESS
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(out)
    report.write_csv(out.with_suffix(".csv"))
    top = report.plane_counts[-1]
    print(f"shape H={report.height} W={report.width} C={report.channels} D={report.depth}, {top} planes")
    print(f"correlation path {report.corr_throughput:.1f} planes/s, baseline {report.baseline_throughput:.2f} planes/s, "
          f"speedup x{report.speedup:.1f}")
    if not math.isnan(report.amortization_r2):
        print(f"amortization fit R^2 = {report.amortization_r2:.4f}")
    return 0


# --- train ---------------------------------------------------------------

def cmd_train(args):
    from .scorer import build_head, save_checkpoint
    from .training import stage_samples, train
    cfg = SearchConfig(sweep=DepthSweep(count=args.depth_samples))
    head = build_head(in_features=(args.depth_samples // 4) * 8 * 8, seed=args.seed)
    samples = []
    for k in range(args.count):
        scene = synth.generate_scene(scene_seed(args.seed, k))
        samples.append(stage_samples(scene, head, cfg))
    losses = train(head, samples, epochs=args.epochs, seed=args.seed)
    save_checkpoint(head, args.out)
    print(f"trained on {args.count} scenes, final epoch loss {losses[-1]:.4f}; wrote {args.out}")
    return 0


def build_parser():
    p = _Parser(prog="symdet", description="Mirror-plane detection with compact correlation volumes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate synthetic scenes")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--pairs", type=_positive_int, default=synth.DEFAULT_PAIRS)
    s.add_argument("--distractors", type=int, default=synth.DEFAULT_DISTRACTORS)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--count", type=_positive_int, default=1)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("detect", help="detect the mirror plane of a scene")
    d.add_argument("--scene", required=True)
    d.add_argument("--stages", type=_int_list, default=list(STAGE_COUNTS))
    d.add_argument("--deltas", type=_float_list, default=list(STAGE_DELTAS))
    d.add_argument("--reducer", choices=REDUCERS, default="max-depth")
    d.add_argument("--scorer", choices=("reducer", "edgeconv"), default="reducer")
    d.add_argument("--checkpoint")
    d.add_argument("--dmin", type=float, default=D_MIN)
    d.add_argument("--dmax", type=float, default=D_MAX)
    d.add_argument("--depth-samples", type=int, default=DEPTH_SAMPLES)
    d.add_argument("--out", required=True)
    d.add_argument("--threads", type=int)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", help="angular error and AA of predictions")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--thresholds", type=_float_list, default=[1.0, 3.0, 5.0, 10.0])
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="compact volume vs 4D feature volume timing")
    b.add_argument("--h", type=_positive_int, default=64)
    b.add_argument("--w", type=_positive_int, default=64)
    b.add_argument("--c", type=_positive_int, default=64)
    b.add_argument("--d", type=_positive_int, default=64)
    b.add_argument("--planes", type=_int_list, default=[256])
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--threads", type=int)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train", help="train the EdgeConv scorer on synthetic scenes")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--count", type=_positive_int, default=64)
    t.add_argument("--epochs", type=_positive_int, default=50)
    t.add_argument("--depth-samples", type=int, default=DEPTH_SAMPLES)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"symdet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
