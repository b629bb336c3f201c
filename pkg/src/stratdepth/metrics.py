"""Per-frame and aggregated depth-error metrics with masking, clamping and
median scaling.

The five standard metrics over jointly-valid pixels:

    abs_rel  = mean(|p - g| / g)
    sq_rel   = mean((p - g)^2 / g)
    rmse     = sqrt(mean((p - g)^2))
    rmse_log = sqrt(mean((ln p - ln g)^2))
    delta_k  = fraction with max(p/g, g/p) < threshold_k   (strict)

Median scaling (for scale-ambiguous predictors) multiplies the prediction by
the median of per-pixel gt/pred ratios before clamping, so the metrics in mm
are expressed in ground-truth units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .depthmap import DepthMap
from .errors import EmptyInputError, EmptyMaskError, ShapeError

DEFAULT_DELTA_THRESHOLDS = (1.25, 1.25**2, 1.25**3)


@dataclass(frozen=True)
class MetricSet:
    """The five scalar depth metrics for one frame or one aggregate."""

    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n_pixels: int

    def __post_init__(self):
        for name in ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if not (self.delta1 <= self.delta2 <= self.delta3 <= 1.0):
            raise ValueError("delta fractions must satisfy delta1 <= delta2 <= delta3 <= 1")
        if self.n_pixels < 0:
            raise ValueError("n_pixels must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "abs_rel": self.abs_rel,
            "sq_rel": self.sq_rel,
            "rmse": self.rmse,
            "rmse_log": self.rmse_log,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
            "n_pixels": self.n_pixels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricSet":
        return cls(
            abs_rel=float(d["abs_rel"]),
            sq_rel=float(d["sq_rel"]),
            rmse=float(d["rmse"]),
            rmse_log=float(d["rmse_log"]),
            delta1=float(d["delta1"]),
            delta2=float(d["delta2"]),
            delta3=float(d["delta3"]),
            n_pixels=int(d["n_pixels"]),
        )


METRIC_FIELDS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3", "n_pixels")


@dataclass(frozen=True)
class EvalOptions:
    """Evaluation configuration: depth clamp range, scaling mode, thresholds.

    Depths are clamped into [min_depth, max_depth] (both in mm) after any
    median scaling; the cap is configuration, not a constant.
    """

    min_depth: float = 1e-3
    max_depth: float = 150.0
    scaling: str = "none"  # "none" | "median"
    delta_thresholds: tuple = DEFAULT_DELTA_THRESHOLDS

    def __post_init__(self):
        if not (0 < self.min_depth < self.max_depth):
            raise ValueError(f"need 0 < min_depth < max_depth, got [{self.min_depth}, {self.max_depth}]")
        if self.scaling not in ("none", "median"):
            raise ValueError(f"scaling must be 'none' or 'median', got {self.scaling!r}")
        if len(self.delta_thresholds) != 3:
            raise ValueError("delta_thresholds must have exactly three entries")


def lower_median(x: np.ndarray) -> float:
    """Median as the lower-middle element of the sorted values.

    For even length this is the lower of the two central elements, never an
    interpolated value, so the result is always one of the inputs.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyInputError("median of empty array")
    k = (x.size - 1) // 2
    return float(np.partition(x, k)[k])


def median_scale(pred: DepthMap, gt: DepthMap) -> tuple[DepthMap, float]:
    """Scale pred so its median depth matches gt over the joint mask.

    Returns (scaled map, ratio) with ratio = median(gt/pred) over jointly
    valid pixels. The median of gt/scaled over the same mask is 1 up to a
    couple of ulp.
    """
    if pred.values.shape != gt.values.shape:
        raise ShapeError(f"pred shape {pred.values.shape} != gt shape {gt.values.shape}")
    joint = pred.valid & gt.valid
    if not joint.any():
        raise EmptyMaskError("no jointly-valid pixels for median scaling")
    ratio = lower_median(gt.values[joint] / pred.values[joint])
    return DepthMap(ratio * pred.values, pred.valid), ratio


def compute_metrics(pred: DepthMap, gt: DepthMap, opts: EvalOptions = EvalOptions()) -> MetricSet:
    """Compute the five depth metrics over jointly-valid pixels.

    Pipeline: optional per-frame median scaling (computed on the unclamped
    joint mask) -> clamp both maps into [min_depth, max_depth] -> per-pixel
    metrics. Invalid pixels never contribute, whatever their values.
    """
    if pred.values.shape != gt.values.shape:
        raise ShapeError(f"pred shape {pred.values.shape} != gt shape {gt.values.shape}")
    joint = pred.valid & gt.valid
    n = int(joint.sum())
    if n == 0:
        raise EmptyMaskError("no jointly-valid pixels")

    p = pred.values[joint]
    g = gt.values[joint]
    if opts.scaling == "median":
        p = lower_median(g / p) * p
    p = np.clip(p, opts.min_depth, opts.max_depth)
    g = np.clip(g, opts.min_depth, opts.max_depth)

    diff = p - g
    abs_rel = float(np.mean(np.abs(diff) / g))
    sq_rel = float(np.mean(diff**2 / g))
    rmse = float(np.sqrt(np.mean(diff**2)))
    rmse_log = float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2)))
    thresh = np.maximum(p / g, g / p)
    t1, t2, t3 = opts.delta_thresholds
    return MetricSet(
        abs_rel=abs_rel,
        sq_rel=sq_rel,
        rmse=rmse,
        rmse_log=rmse_log,
        delta1=float(np.mean(thresh < t1)),
        delta2=float(np.mean(thresh < t2)),
        delta3=float(np.mean(thresh < t3)),
        n_pixels=n,
    )


def aggregate(per_frame: Sequence[MetricSet], mode: str = "frame_mean") -> MetricSet:
    """Aggregate per-frame metrics into one row.

    frame_mean: unweighted mean of every metric over frames (each frame
    counts once regardless of its pixel count); n_pixels is the sum.
    """
    if mode != "frame_mean":
        raise ValueError(f"unknown aggregation mode {mode!r}")
    if len(per_frame) == 0:
        raise EmptyInputError("cannot aggregate an empty list of metric sets")
    return MetricSet(
        abs_rel=float(np.mean([m.abs_rel for m in per_frame])),
        sq_rel=float(np.mean([m.sq_rel for m in per_frame])),
        rmse=float(np.mean([m.rmse for m in per_frame])),
        rmse_log=float(np.mean([m.rmse_log for m in per_frame])),
        delta1=float(np.mean([m.delta1 for m in per_frame])),
        delta2=float(np.mean([m.delta2 for m in per_frame])),
        delta3=float(np.mean([m.delta3 for m in per_frame])),
        n_pixels=int(sum(m.n_pixels for m in per_frame)),
    )
