"""Pinhole camera rig and inverse warping of a source view onto a target
depth map.

For each target pixel with valid depth d, the pixel ray is backprojected to
the 3-D point d * K^-1 (u, v, 1)^T, moved by the rigid transform (R, t),
reprojected with K, and the source image is bilinearly sampled there. The
math is evaluated as ray' = R * K^-1 (u, v, 1)^T + t / d, which equals the
transformed point divided by d; the projection only depends on that
direction, and the form keeps the identity rig exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthmap import DepthMap
from .errors import ShapeError
from .losses import Image

ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class CameraRig:
    """Pinhole intrinsics plus an SE(3) pose taking target-camera points to
    the source camera."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64)
        if rotation.shape != (3, 3):
            raise ShapeError(f"rotation must be 3x3, got {rotation.shape}")
        if translation.shape != (3,):
            raise ShapeError(f"translation must be a 3-vector, got {translation.shape}")
        if not np.isfinite(rotation).all() or not np.isfinite(translation).all():
            raise ValueError("rotation and translation must be finite")
        if np.abs(rotation @ rotation.T - np.eye(3)).max() > ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation determinant must be +1 (no reflections)")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @staticmethod
    def identity(fx: float, fy: float, cx: float, cy: float) -> "CameraRig":
        return CameraRig(fx, fy, cx, cy, np.eye(3), np.zeros(3))


def bilinear_sample(source: np.ndarray, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample source (H, W) or (H, W, C) at real coordinates (u, v).

    A sample is valid only when u in [0, W-1] and v in [0, H-1], so every
    nonzero-weight tap lands inside the image; out-of-range samples return 0
    with valid=False rather than extrapolating.
    """
    h, w = source.shape[:2]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1) & np.isfinite(u) & np.isfinite(v)
    uc = np.where(inside, u, 0.0)
    vc = np.where(inside, v, 0.0)
    u0 = np.floor(uc).astype(np.int64)
    v0 = np.floor(vc).astype(np.int64)
    fu = uc - u0
    fv = vc - v0
    u1 = np.minimum(u0 + 1, w - 1)  # clamp is exact: fu == 0 whenever u0 == w-1
    v1 = np.minimum(v0 + 1, h - 1)

    def tap(vi, ui):
        return source[vi, ui]

    top = (1.0 - fu)[..., None] * tap(v0, u0) if source.ndim == 3 else (1.0 - fu) * tap(v0, u0)
    if source.ndim == 3:
        top = top + fu[..., None] * tap(v0, u1)
        bot = (1.0 - fu)[..., None] * tap(v1, u0) + fu[..., None] * tap(v1, u1)
        out = (1.0 - fv)[..., None] * top + fv[..., None] * bot
        out[~inside] = 0.0
    else:
        top = top + fu * tap(v0, u1)
        bot = (1.0 - fu) * tap(v1, u0) + fu * tap(v1, u1)
        out = (1.0 - fv) * top + fv * bot
        out = np.where(inside, out, 0.0)
    return out, inside


def warp(source: Image, target_depth: DepthMap, rig: CameraRig) -> tuple[Image, np.ndarray]:
    """Warp the source image into the target view defined by the depth map.

    Returns the warped image (zeros where invalid) and the validity mask:
    false where the target depth is invalid, the transformed point lies at
    or behind the source camera plane, or the reprojection falls outside the
    source image bounds.
    """
    h, w = target_depth.height, target_depth.width
    u = np.arange(w, dtype=np.float64)[None, :].repeat(h, axis=0)
    v = np.arange(h, dtype=np.float64)[:, None].repeat(w, axis=1)

    # normalized camera rays for every target pixel
    rx = (u - rig.cx) / rig.fx
    ry = (v - rig.cy) / rig.fy
    rz = np.ones_like(rx)

    r = rig.rotation
    mx = r[0, 0] * rx + r[0, 1] * ry + r[0, 2] * rz
    my = r[1, 0] * rx + r[1, 1] * ry + r[1, 2] * rz
    mz = r[2, 0] * rx + r[2, 1] * ry + r[2, 2] * rz

    depth = target_depth.values
    depth_ok = target_depth.valid
    safe_depth = np.where(depth_ok, depth, 1.0)
    tx, ty, tz = rig.translation
    with np.errstate(over="ignore", invalid="ignore"):
        # transformed point divided by depth; projection is scale-free in this
        px = mx + tx / safe_depth
        py = my + ty / safe_depth
        pz = mz + tz / safe_depth

        in_front = depth_ok & (pz > 0) & np.isfinite(pz)
        safe_pz = np.where(in_front, pz, 1.0)
        u_src = rig.fx * (px / safe_pz) + rig.cx
        v_src = rig.fy * (py / safe_pz) + rig.cy

    sampled, sample_ok = bilinear_sample(source.values, u_src, v_src)
    valid = in_front & sample_ok
    if sampled.ndim == 3:
        sampled[~valid] = 0.0
    else:
        sampled = np.where(valid, sampled, 0.0)
    return Image(sampled), valid
