"""Command-line entry point.

Subcommands: evaluate, stratify, warp, dvlora-check, ate. Exit codes: 0 on
success, 2 on data errors (unreadable or malformed inputs, empty results),
64 on usage errors. All randomness flows from the explicit --seed flag; logs
go to stderr (level from STRATDEPTH_LOG), machine-readable output to stdout
and files. Every report embeds the fully-resolved configuration so a run
can be reproduced byte-for-byte from its report.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, dvlora, io, pose, stratify
from .depthmap import DepthMap
from .errors import ManifestError, StratDepthError
from .losses import Image, LossWeights, edge_aware_smoothness, photometric_loss, total_loss
from .metrics import EvalOptions, MetricSet, aggregate, compute_metrics
from .warp import CameraRig, warp

logger = logging.getLogger("stratdepth.cli")

EXIT_OK = 0
EXIT_DATA_ERROR = 2
EXIT_USAGE = 64

_FEATURE_FLAG_TO_KIND = {"valid-ratio": "valid_ratio", "baseline-error": "baseline_error"}


class _Parser(argparse.ArgumentParser):
    """argparse with the scriptable usage exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging():
    level_name = os.environ.get("STRATDEPTH_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def _tool_info() -> dict:
    return {"name": "stratdepth", "version": __version__}


def _resolve(base_dir: Path, p: str) -> str:
    path = Path(p)
    return str(path if path.is_absolute() else base_dir / path)


def _load_frame(entry: io.FrameEntry, base_dir: Path, depth_scale: float) -> tuple[DepthMap, DepthMap]:
    pred = io.load_depth(_resolve(base_dir, entry.pred_path), depth_scale)
    gt = io.load_depth(_resolve(base_dir, entry.gt_path), depth_scale)
    return pred, gt


def _eval_options(args) -> EvalOptions:
    return EvalOptions(min_depth=args.min_depth, max_depth=args.max_depth, scaling=args.scaling)


def _map_frames(fn, entries, jobs: int):
    """Apply fn over entries, in manifest order regardless of completion order."""
    if jobs <= 1:
        return [fn(e) for e in entries]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, entries))


def _add_eval_flags(p: argparse.ArgumentParser):
    p.add_argument("--min-depth", type=float, default=1e-3, help="clamp floor in mm (default 1e-3)")
    p.add_argument("--max-depth", type=float, default=150.0, help="clamp cap in mm (default 150)")
    p.add_argument("--scaling", choices=["none", "median"], default="none", help="per-frame prediction scaling")
    p.add_argument("--depth-scale", type=float, default=1.0, help="PGM16 raw-to-mm divisor (default 1)")
    p.add_argument("--jobs", type=int, default=1, help="parallel frame workers (default 1)")


def cmd_evaluate(args) -> int:
    manifest = io.read_manifest(args.manifest)
    base_dir = Path(args.manifest).parent
    opts = _eval_options(args)

    def eval_one(entry):
        try:
            pred, gt = _load_frame(entry, base_dir, args.depth_scale)
            return entry.frame_id, compute_metrics(pred, gt, opts), None
        except (StratDepthError, OSError, ValueError) as exc:
            return entry.frame_id, None, f"{type(exc).__name__}: {exc}"

    results = _map_frames(eval_one, manifest.entries, args.jobs)
    frames = [{"frame_id": fid, "metrics": m.to_dict()} for fid, m, err in results if err is None]
    skipped = [{"frame_id": fid, "reason": err} for fid, _, err in results if err is not None]
    evaluated = [MetricSet.from_dict(f["metrics"]) for f in frames]

    report = {
        "tool": _tool_info(),
        "config": {
            "command": "evaluate",
            "manifest": args.manifest,
            "out": args.out,
            "min_depth": args.min_depth,
            "max_depth": args.max_depth,
            "scaling": args.scaling,
            "depth_scale": args.depth_scale,
            "jobs": args.jobs,
        },
        "frames": frames,
        "aggregate": aggregate(evaluated).to_dict() if evaluated else None,
        "skipped": skipped,
    }
    io.write_report(args.out, report)
    if args.csv_out and evaluated:
        io.write_metrics_csv(args.csv_out, {"all": (len(evaluated), aggregate(evaluated))})
    print(f"evaluated {len(frames)} frames, skipped {len(skipped)}; report: {args.out}")
    if not evaluated:
        logger.error("no frame could be evaluated")
        return EXIT_DATA_ERROR
    return EXIT_OK


def cmd_stratify(args) -> int:
    if args.k not in (1, 3):
        raise UsageError("difficulty labels are defined for --k 1 or --k 3")
    manifest = io.read_manifest(args.manifest)
    base_dir = Path(args.manifest).parent
    opts = _eval_options(args)
    feature_kind = _FEATURE_FLAG_TO_KIND[args.feature]

    if feature_kind == "baseline_error":
        missing = [e.frame_id for e in manifest if e.baseline_abs_rel is None]
        if missing:
            raise ManifestError(
                f"baseline-error clustering needs 'baseline_abs_rel' on every frame; missing for {missing}"
            )

    def eval_one(entry):
        try:
            pred, gt = _load_frame(entry, base_dir, args.depth_scale)
            feature = (
                stratify.valid_ratio(gt)
                if feature_kind == "valid_ratio"
                else float(entry.baseline_abs_rel)
            )
            return entry.frame_id, feature, compute_metrics(pred, gt, opts), None
        except (StratDepthError, OSError, ValueError) as exc:
            return entry.frame_id, None, None, f"{type(exc).__name__}: {exc}"

    results = _map_frames(eval_one, manifest.entries, args.jobs)
    kept = [(fid, feat, m) for fid, feat, m, err in results if err is None]
    skipped = [{"frame_id": fid, "reason": err} for fid, _, _, err in results if err is not None]
    if len(kept) < args.k:
        logger.error("only %d usable frames for k=%d components", len(kept), args.k)
        report = {
            "tool": _tool_info(),
            "config": _stratify_config(args),
            "frames": [],
            "aggregate": None,
            "gmm": None,
            "clusters": None,
            "skipped": skipped,
        }
        io.write_report(args.out, report)
        return EXIT_DATA_ERROR

    features = np.array([feat for _, feat, _ in kept])
    per_frame = [m for _, _, m in kept]
    model = stratify.fit_gmm_1d(
        features, k=args.k, seed=args.seed, tol=args.tol, max_iter=args.max_iter, feature_kind=feature_kind
    )
    labels = stratify.assign(model, features)

    if args.k == 3:
        labeling = stratify.label_difficulty(model)
        by_component = dict(labeling.by_component)
        clusters = stratify.stratified_report(labels, labeling, per_frame)
    else:
        labeling = None
        by_component = {0: "Hard"}
        clusters = {"Hard": (len(per_frame), aggregate(per_frame))}

    report = {
        "tool": _tool_info(),
        "config": _stratify_config(args),
        "frames": [
            {
                "frame_id": fid,
                "feature": feat,
                "component": int(label),
                "difficulty": by_component[int(label)],
                "metrics": m.to_dict(),
            }
            for (fid, feat, m), label in zip(kept, labels)
        ],
        "aggregate": aggregate(per_frame).to_dict(),
        "gmm": model.to_dict(labeling),
        "clusters": {
            name: {"count": count, "metrics": None if m is None else m.to_dict()}
            for name, (count, m) in clusters.items()
        },
        "skipped": skipped,
    }
    io.write_report(args.out, report)
    if args.model_out:
        stratify.save_model(args.model_out, model, labeling)
    if args.csv_out:
        io.write_metrics_csv(args.csv_out, clusters)
    counts = {name: count for name, (count, _) in clusters.items()}
    print(f"stratified {len(kept)} frames into {counts}; report: {args.out}")
    return EXIT_OK


def _stratify_config(args) -> dict:
    return {
        "command": "stratify",
        "manifest": args.manifest,
        "out": args.out,
        "feature": args.feature,
        "k": args.k,
        "seed": args.seed,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "min_depth": args.min_depth,
        "max_depth": args.max_depth,
        "scaling": args.scaling,
        "depth_scale": args.depth_scale,
        "jobs": args.jobs,
    }


def _load_rig(path) -> CameraRig:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    try:
        return CameraRig(
            fx=float(doc["fx"]),
            fy=float(doc["fy"]),
            cx=float(doc["cx"]),
            cy=float(doc["cy"]),
            rotation=np.asarray(doc["rotation"], dtype=np.float64),
            translation=np.asarray(doc["translation"], dtype=np.float64),
        )
    except KeyError as exc:
        raise ValueError(f"rig file {path} is missing field {exc}") from exc


def cmd_warp(args) -> int:
    rig = _load_rig(args.rig)  # validates before any compute
    source = Image(io.read_pfm(args.image))
    depth = io.load_depth(args.depth, args.depth_scale)
    warped, valid = warp(source, depth, rig)

    io.write_pfm(args.out, warped.values)
    mask_out = args.mask_out or (args.out + ".mask.pfm")
    io.write_pfm(mask_out, valid.astype(np.float64))
    print(f"warped image: {args.out}")
    print(f"validity mask: {mask_out}")

    if args.target:
        target = Image(io.read_pfm(args.target))
        _, lp = photometric_loss(target, warped, valid, alpha=args.alpha)
        print(f"photometric_loss {lp!r}")
        if args.disp:
            disp = Image(io.read_pfm(args.disp))
            le = edge_aware_smoothness(disp, target)
            lt = total_loss(lp, le, LossWeights(alpha=args.alpha, lambda_=args.lambda_))
            print(f"smoothness_loss {le!r}")
            print(f"total_loss {lt!r}")
    elif args.disp:
        raise UsageError("--disp requires --target (the smoothness guide image)")
    return EXIT_OK


def cmd_dvlora_check(args) -> int:
    if args.rank < 1 or args.rank > min(args.d_in, args.d_out):
        raise UsageError(f"--rank must be in [1, {min(args.d_in, args.d_out)}]")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")

    n_params = dvlora.trainable_param_count(args.d_in, args.d_out, args.rank)
    print(f"trainable_param_count {n_params}")

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    failures = 0
    for _ in range(args.trials):
        layer = dvlora.DvLoraLayer(
            w0=rng.standard_normal((args.d_out, args.d_in)),
            a=rng.standard_normal((args.rank, args.d_in)),
            b=rng.standard_normal((args.d_out, args.rank)),
            lambda_u=rng.standard_normal(args.rank),
            lambda_v=rng.standard_normal(args.d_out),
        )
        x = rng.standard_normal((args.d_in, 3))
        upstream = rng.standard_normal((args.d_out, 3))
        errors = dvlora.finite_difference_check(layer, x, upstream, step=args.step)
        trial_worst = max(errors.values())
        worst = max(worst, trial_worst)
        if trial_worst >= args.threshold:
            failures += 1
    status = "pass" if failures == 0 else "FAIL"
    print(f"gradient_check {status}: {args.trials} trials, max relative error {worst!r} (threshold {args.threshold!r})")
    if args.out:
        io.write_report(
            args.out,
            {
                "tool": _tool_info(),
                "config": {
                    "command": "dvlora-check",
                    "d_in": args.d_in,
                    "d_out": args.d_out,
                    "rank": args.rank,
                    "seed": args.seed,
                    "trials": args.trials,
                    "step": args.step,
                    "threshold": args.threshold,
                },
                "trainable_param_count": n_params,
                "max_relative_error": worst,
                "failures": failures,
                "passed": failures == 0,
            },
        )
    return EXIT_OK if failures == 0 else EXIT_DATA_ERROR


def cmd_ate(args) -> int:
    gt = pose.read_trajectory(args.gt)
    est = pose.read_trajectory(args.est)
    rmse, residuals = pose.ate(gt, est, align=args.align)
    print(f"ate_rmse {rmse!r}")
    print(f"frames {len(residuals)}")
    if args.out:
        pose.write_trajectory(args.out, pose.aligned_trajectory(gt, est, args.align))
        print(f"aligned trajectory: {args.out}")
    return EXIT_OK


class UsageError(Exception):
    """Raised by commands for argument combinations argparse cannot check."""


def build_parser() -> _Parser:
    parser = _Parser(prog="stratdepth", description=__doc__)
    parser.add_argument("--version", action="version", version=f"stratdepth {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("evaluate", help="per-frame depth metrics plus frame-mean aggregate")
    p_eval.add_argument("--manifest", required=True, help="frame manifest JSON")
    p_eval.add_argument("--out", required=True, help="report JSON path")
    p_eval.add_argument("--csv-out", default=None, help="optional flattened CSV path")
    _add_eval_flags(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_strat = sub.add_parser("stratify", help="cluster frames by difficulty and report per cluster")
    p_strat.add_argument("--manifest", required=True, help="frame manifest JSON")
    p_strat.add_argument("--out", required=True, help="report JSON path")
    p_strat.add_argument("--csv-out", default=None, help="optional flattened CSV path")
    p_strat.add_argument("--model-out", default=None, help="optional mixture-model JSON path")
    p_strat.add_argument("--feature", choices=sorted(_FEATURE_FLAG_TO_KIND), default="valid-ratio")
    p_strat.add_argument("--k", type=int, default=3, help="mixture components (1 or 3)")
    p_strat.add_argument("--seed", type=int, default=0, help="seed for the mixture fit")
    p_strat.add_argument("--tol", type=float, default=stratify.DEFAULT_TOL)
    p_strat.add_argument("--max-iter", type=int, default=stratify.DEFAULT_MAX_ITER)
    _add_eval_flags(p_strat)
    p_strat.set_defaults(func=cmd_stratify)

    p_warp = sub.add_parser("warp", help="warp a source view onto a target depth map")
    p_warp.add_argument("--image", required=True, help="source image (grayscale PFM)")
    p_warp.add_argument("--depth", required=True, help="target depth (.pfm or .pgm)")
    p_warp.add_argument("--rig", required=True, help="camera rig JSON (fx, fy, cx, cy, rotation, translation)")
    p_warp.add_argument("--out", required=True, help="warped image PFM path")
    p_warp.add_argument("--mask-out", default=None, help="validity mask PFM path (default: OUT.mask.pfm)")
    p_warp.add_argument("--target", default=None, help="target image PFM; prints the photometric loss")
    p_warp.add_argument("--disp", default=None, help="disparity PFM; with --target prints smoothness and total loss")
    p_warp.add_argument("--alpha", type=float, default=0.85, help="SSIM/L1 blend weight")
    p_warp.add_argument("--lambda", dest="lambda_", type=float, default=1e-3, help="smoothness weight")
    p_warp.add_argument("--depth-scale", type=float, default=1.0, help="PGM16 raw-to-mm divisor")
    p_warp.set_defaults(func=cmd_warp)

    p_check = sub.add_parser("dvlora-check", help="finite-difference gradient check for the adapter layer")
    p_check.add_argument("--d-in", type=int, default=5)
    p_check.add_argument("--d-out", type=int, default=4)
    p_check.add_argument("--rank", type=int, default=2)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--trials", type=int, default=100)
    p_check.add_argument("--step", type=float, default=1e-5)
    p_check.add_argument("--threshold", type=float, default=1e-6)
    p_check.add_argument("--out", default=None, help="optional JSON summary path")
    p_check.set_defaults(func=cmd_dvlora_check)

    p_ate = sub.add_parser("ate", help="absolute trajectory error with optional alignment")
    p_ate.add_argument("--gt", required=True, help="ground-truth trajectory file")
    p_ate.add_argument("--est", required=True, help="estimated trajectory file")
    p_ate.add_argument("--align", choices=list(pose.ALIGN_MODES), default="se3")
    p_ate.add_argument("--out", default=None, help="write the aligned estimate here")
    p_ate.set_defaults(func=cmd_ate)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stratdepth {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StratDepthError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"stratdepth {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
