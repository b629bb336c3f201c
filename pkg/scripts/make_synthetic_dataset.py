#!/usr/bin/env python3
"""Generate a desk-scale synthetic dataset for exercising the CLI.

Creates frames in three valid-density regimes (mimicking specularity-driven
sensor dropout), predictions as noisy distortions of the ground truth, a
frame manifest with baseline error fields, and a small warp demo (source /
target image pair, constant-depth map, rig file with a pure translation).

Example:
    python scripts/make_synthetic_dataset.py --out-dir demo_data --seed 0
    stratdepth evaluate --manifest demo_data/manifest.json --out demo_data/eval.json --scaling median
    stratdepth stratify --manifest demo_data/manifest.json --out demo_data/strat.json --feature valid-ratio --k 3 --seed 0
    stratdepth warp --image demo_data/warp/source.pfm --depth demo_data/warp/depth.pfm \
        --rig demo_data/warp/rig.json --out demo_data/warp/warped.pfm --target demo_data/warp/target.pfm
"""

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from stratdepth.io import FrameEntry, FrameManifest, write_manifest, write_pfm, write_pgm16


@dataclass(frozen=True)
class DatasetConfig:
    out_dir: Path
    seed: int = 0
    frames_per_regime: int = 8
    height: int = 24
    width: int = 24
    # valid-density centers for the Hard / Medium / Easy regimes
    densities: tuple = (0.20, 0.35, 0.53)
    # prediction noise per regime: harder frames get noisier predictions
    noise_levels: tuple = (0.10, 0.06, 0.03)
    depth_range_mm: tuple = (20.0, 120.0)
    warp_shift_px: float = 2.5
    warp_depth_mm: float = 40.0
    warp_focal_px: float = 32.0


def make_frames(cfg: DatasetConfig, rng: np.random.Generator) -> FrameManifest:
    entries = []
    idx = 0
    for density, noise in zip(cfg.densities, cfg.noise_levels):
        for _ in range(cfg.frames_per_regime):
            fid = f"frame{idx:03d}"
            lo, hi = cfg.depth_range_mm
            gt_mm = rng.uniform(lo, hi, (cfg.height, cfg.width))
            dropout = rng.random((cfg.height, cfg.width)) > rng.normal(density, 0.02)
            gt_raw = np.round(gt_mm * 64.0).astype(np.uint16)  # 1/64 mm quantization
            gt_raw[dropout] = 0
            if not gt_raw.any():
                gt_raw[0, 0] = int(lo * 64)

            pred = np.clip(gt_mm * (1.0 + rng.normal(0.0, noise, gt_mm.shape)), 1.0, None)
            baseline_abs_rel = float(np.abs(rng.normal(noise, noise / 5)))

            write_pfm(cfg.out_dir / f"{fid}_pred.pfm", pred)
            write_pgm16(cfg.out_dir / f"{fid}_gt.pgm", gt_raw)
            entries.append(
                FrameEntry(
                    frame_id=fid,
                    pred_path=f"{fid}_pred.pfm",
                    gt_path=f"{fid}_gt.pgm",
                    baseline_abs_rel=baseline_abs_rel,
                )
            )
            idx += 1
    return FrameManifest(tuple(entries))


def make_warp_demo(cfg: DatasetConfig, rng: np.random.Generator) -> None:
    warp_dir = cfg.out_dir / "warp"
    warp_dir.mkdir(exist_ok=True)
    h, w = cfg.height, cfg.width
    # smooth random texture in [0, 1]
    texture = rng.random((h, w))
    kernel = np.ones(5) / 5
    for axis in (0, 1):
        texture = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), axis, texture)
    tx = cfg.warp_shift_px * cfg.warp_depth_mm / cfg.warp_focal_px
    # the target is the source shifted by the closed-form pixel offset
    target = np.empty_like(texture)
    shift = int(round(cfg.warp_shift_px))
    target[:, : w - shift] = texture[:, shift:]
    target[:, w - shift :] = texture[:, -1:]

    write_pfm(warp_dir / "source.pfm", texture)
    write_pfm(warp_dir / "target.pfm", target)
    write_pfm(warp_dir / "depth.pfm", np.full((h, w), cfg.warp_depth_mm))
    rig = {
        "fx": cfg.warp_focal_px,
        "fy": cfg.warp_focal_px,
        "cx": (w - 1) / 2,
        "cy": (h - 1) / 2,
        "rotation": np.eye(3).tolist(),
        "translation": [tx, 0.0, 0.0],
    }
    (warp_dir / "rig.json").write_text(json.dumps(rig, indent=2) + "\n")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out-dir", type=Path, required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--frames-per-regime", type=int, default=8)
    parser.add_argument("--size", type=int, default=24, help="frame side length in pixels")
    args = parser.parse_args()

    cfg = DatasetConfig(
        out_dir=args.out_dir,
        seed=args.seed,
        frames_per_regime=args.frames_per_regime,
        height=args.size,
        width=args.size,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    manifest = make_frames(cfg, rng)
    write_manifest(cfg.out_dir / "manifest.json", manifest)
    make_warp_demo(cfg, rng)
    print(f"wrote {len(manifest)} frames, manifest and warp demo under {cfg.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
