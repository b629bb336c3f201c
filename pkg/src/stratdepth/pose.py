"""SE(3) utilities and Absolute Trajectory Error with optional closed-form
alignment.

Trajectories interchange as plain text, one pose per line:

    timestamp tx ty tz qx qy qz qw

with translation in mm and a unit quaternion (x, y, z, w last).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AlignmentError,
    DegenerateTrajectoryError,
    FormatError,
    ShapeError,
)

ROTATION_TOL = 1e-9
ALIGN_MODES = ("none", "se3", "sim3")
_COLLINEAR_REL_TOL = 1e-10


@dataclass(frozen=True)
class SE3:
    """Rigid transform: rotation (3x3, det +1) plus translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise ShapeError("SE3 needs a 3x3 rotation and a 3-vector translation")
        if not np.isfinite(rotation).all() or not np.isfinite(translation).all():
            raise ValueError("SE3 entries must be finite")
        if np.abs(rotation @ rotation.T - np.eye(3)).max() > ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation determinant must be +1")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @staticmethod
    def identity() -> "SE3":
        return SE3(np.eye(3), np.zeros(3))

    def inverse(self) -> "SE3":
        rt = self.rotation.T
        return SE3(rt, -(rt @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


def compose(p: SE3, q: SE3) -> SE3:
    """p then-applied-after q: (p o q)(x) = p(q(x))."""
    return SE3(p.rotation @ q.rotation, p.rotation @ q.translation + p.translation)


@dataclass(frozen=True)
class Trajectory:
    """Timestamped pose sequence; timestamps strictly increasing."""

    timestamps: np.ndarray
    poses: tuple

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        poses = tuple(self.poses)
        if ts.ndim != 1 or len(poses) != ts.size:
            raise ShapeError("timestamps and poses must have equal length")
        if ts.size and not (np.diff(ts) > 0).all():
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses], dtype=np.float64).reshape(-1, 3)


def quaternion_to_rotation(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    """Rotation matrix from a quaternion (normalized first)."""
    n = np.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
    if n == 0 or not np.isfinite(n):
        raise ValueError("quaternion must be nonzero and finite")
    x, y, z, w = qx / n, qy / n, qz / n, qw / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(r: np.ndarray) -> tuple[float, float, float, float]:
    """Quaternion (x, y, z, w) with w >= 0 from a rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(r)))
        if i == 0:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            x = 0.25 * s
            y = (r[0, 1] + r[1, 0]) / s
            z = (r[0, 2] + r[2, 0]) / s
            w = (r[2, 1] - r[1, 2]) / s
        elif i == 1:
            s = np.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2]) * 2
            x = (r[0, 1] + r[1, 0]) / s
            y = 0.25 * s
            z = (r[1, 2] + r[2, 1]) / s
            w = (r[0, 2] - r[2, 0]) / s
        else:
            s = np.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2]) * 2
            x = (r[0, 2] + r[2, 0]) / s
            y = (r[1, 2] + r[2, 1]) / s
            z = 0.25 * s
            w = (r[1, 0] - r[0, 1]) / s
    if w < 0:
        x, y, z, w = -x, -y, -z, -w
    return float(x), float(y), float(z), float(w)


def umeyama_alignment(
    est: np.ndarray, gt: np.ndarray, with_scale: bool
) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares (scale,) rotation and translation mapping est points
    onto gt points, with the standard determinant correction so the rotation
    is never a reflection.

    Requires at least 3 points that are not all collinear; otherwise the
    rotation is not uniquely determined and DegenerateTrajectoryError is
    raised.
    """
    est = np.asarray(est, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    n = est.shape[0]
    if n < 3:
        raise DegenerateTrajectoryError(f"alignment needs >= 3 points, got {n}")

    mu_est = est.mean(axis=0)
    mu_gt = gt.mean(axis=0)
    est_c = est - mu_est
    gt_c = gt - mu_gt

    for name, centered in (("estimated", est_c), ("ground-truth", gt_c)):
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[0] == 0 or sv[1] <= _COLLINEAR_REL_TOL * sv[0]:
            raise DegenerateTrajectoryError(f"{name} positions are collinear; no unique alignment")

    cov = gt_c.T @ est_c / n
    u, d, vt = np.linalg.svd(cov)
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    rot = u @ np.diag(s) @ vt
    if with_scale:
        var_est = float(np.mean(np.sum(est_c**2, axis=1)))
        scale = float(np.sum(d * s) / var_est)
    else:
        scale = 1.0
    trans = mu_gt - scale * (rot @ mu_est)
    return scale, rot, trans


def ate(gt: Trajectory, est: Trajectory, align: str = "none") -> tuple[float, np.ndarray]:
    """RMSE of position residuals after the chosen alignment.

    align="none" compares positions as given; "se3" first finds the optimal
    rigid transform of est onto gt; "sim3" additionally solves for a uniform
    scale. Returns (rmse, per-frame residual norms).
    """
    if align not in ALIGN_MODES:
        raise ValueError(f"align must be one of {ALIGN_MODES}, got {align!r}")
    if len(gt) != len(est):
        raise AlignmentError(f"trajectory lengths differ: {len(gt)} vs {len(est)}")
    if len(gt) == 0:
        raise AlignmentError("empty trajectories")
    if not np.array_equal(gt.timestamps, est.timestamps):
        raise AlignmentError("timestamps do not match exactly")

    p_gt = gt.positions()
    p_est = est.positions()
    if align != "none":
        scale, rot, trans = umeyama_alignment(p_est, p_gt, with_scale=(align == "sim3"))
        p_est = scale * (p_est @ rot.T) + trans
    residuals = np.linalg.norm(p_est - p_gt, axis=1)
    return float(np.sqrt(np.mean(residuals**2))), residuals


def aligned_trajectory(gt: Trajectory, est: Trajectory, align: str) -> Trajectory:
    """The estimate with the ATE alignment applied to every pose."""
    if align == "none":
        return est
    scale, rot, trans = umeyama_alignment(est.positions(), gt.positions(), with_scale=(align == "sim3"))
    poses = tuple(
        SE3(rot @ p.rotation, scale * (rot @ p.translation) + trans) for p in est.poses
    )
    return Trajectory(est.timestamps, poses)


def read_trajectory(path) -> Trajectory:
    """Parse the one-pose-per-line interchange format; '#' starts a comment."""
    timestamps = []
    poses = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise FormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                values = [float(p) for p in parts]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric field ({exc})") from exc
            ts, tx, ty, tz, qx, qy, qz, qw = values
            try:
                rot = quaternion_to_rotation(qx, qy, qz, qw)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad quaternion ({exc})") from exc
            timestamps.append(ts)
            poses.append(SE3(rot, np.array([tx, ty, tz])))
    try:
        return Trajectory(np.asarray(timestamps), tuple(poses))
    except (ValueError, ShapeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_trajectory(path, traj: Trajectory) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ts, pose in zip(traj.timestamps, traj.poses):
            qx, qy, qz, qw = rotation_to_quaternion(pose.rotation)
            fields = [float(ts), *map(float, pose.translation), qx, qy, qz, qw]
            f.write(" ".join(repr(v) for v in fields) + "\n")
