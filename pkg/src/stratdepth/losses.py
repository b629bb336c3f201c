"""Self-supervised loss stack: windowed SSIM, photometric reconstruction
loss, edge-aware disparity smoothness, and their weighted total.

All images are float grids nominally in [0, 1], stored (H, W) for one
channel or (H, W, C) for three.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import DegenerateDisparityError, EmptyMaskError, ShapeError

DEFAULT_ALPHA = 0.85
DEFAULT_LAMBDA = 1e-3
DEFAULT_WINDOW = 3
DEFAULT_C1 = 0.01**2
DEFAULT_C2 = 0.03**2


@dataclass(frozen=True)
class Image:
    """Dense image grid, single channel (H, W) or three channels (H, W, 3)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 2:
            pass
        elif values.ndim == 3 and values.shape[2] in (1, 3):
            pass
        else:
            raise ShapeError(f"image must be (H, W) or (H, W, 1|3), got {values.shape}")
        if values.size == 0:
            raise ShapeError("image must be nonempty")
        if not np.isfinite(values).all():
            raise ValueError("image values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.values.ndim == 2 else self.values.shape[2]


@dataclass(frozen=True)
class LossWeights:
    """alpha blends SSIM vs L1 inside the photometric term; lambda_ weights
    the smoothness term in the total."""

    alpha: float = DEFAULT_ALPHA
    lambda_: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.lambda_ < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lambda_}")


def _window_mean(x: np.ndarray, window: int) -> np.ndarray:
    # uniform box window, edge-inclusive reflect padding (a b c | c b a)
    if x.ndim == 2:
        return uniform_filter(x, size=window, mode="reflect")
    return uniform_filter(x, size=(window, window, 1), mode="reflect")


def ssim(a: Image, b: Image, window: int = DEFAULT_WINDOW, c1: float = DEFAULT_C1, c2: float = DEFAULT_C2) -> tuple[Image, float]:
    """Per-pixel SSIM map and its mean over all pixels and channels.

    Local means, variances and covariance come from a uniform window of odd
    side `window` with reflect padding; variances use E[x^2] - E[x]^2. The
    map lies in [-1, 1] up to roundoff, and ssim(a, a) is exactly 1.
    """
    if a.values.shape != b.values.shape:
        raise ShapeError(f"image shapes differ: {a.values.shape} vs {b.values.shape}")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    x, y = a.values, b.values
    mu_x = _window_mean(x, window)
    mu_y = _window_mean(y, window)
    var_x = _window_mean(x * x, window) - mu_x * mu_x
    var_y = _window_mean(y * y, window) - mu_y * mu_y
    cov = _window_mean(x * y, window) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    ssim_map = num / den
    return Image(ssim_map), float(np.mean(ssim_map))


def photometric_loss(
    target: Image,
    warped: Image,
    valid: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    window: int = DEFAULT_WINDOW,
    c1: float = DEFAULT_C1,
    c2: float = DEFAULT_C2,
) -> tuple[Image, float]:
    """Blend of structural dissimilarity and L1 between target and warped.

    Per pixel: alpha * (1 - SSIM)/2 + (1 - alpha) * |target - warped|.
    The scalar is the mean over pixels where `valid` is true (all channels
    of a valid pixel contribute).
    """
    if target.values.shape != warped.values.shape:
        raise ShapeError(f"image shapes differ: {target.values.shape} vs {warped.values.shape}")
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (target.height, target.width):
        raise ShapeError(f"valid mask shape {valid.shape} != image grid {(target.height, target.width)}")
    if not valid.any():
        raise EmptyMaskError("photometric loss over an empty valid mask")
    ssim_map, _ = ssim(target, warped, window=window, c1=c1, c2=c2)
    l1 = np.abs(target.values - warped.values)
    loss_map = alpha * (1.0 - ssim_map.values) / 2.0 + (1.0 - alpha) * l1
    # boolean indexing on the leading dims covers both (H, W) and (H, W, C)
    return Image(loss_map), float(np.mean(loss_map[valid]))


def edge_aware_smoothness(disp: Image, guide: Image) -> float:
    """Mean disparity gradient, down-weighted where the guide image has edges.

    The disparity is normalized by its mean so the loss is invariant to
    positive rescaling; gradients are forward differences, with the last
    column (x) / row (y) excluded since the difference is undefined there;
    guide gradients are channel-averaged.
    """
    if disp.channels != 1:
        raise ShapeError(f"disparity must be single-channel, got {disp.channels}")
    if (guide.height, guide.width) != (disp.height, disp.width):
        raise ShapeError(
            f"guide grid {(guide.height, guide.width)} != disparity grid {(disp.height, disp.width)}"
        )
    d = disp.values if disp.values.ndim == 2 else disp.values[:, :, 0]
    mean = float(np.mean(d))
    if mean == 0.0:
        raise DegenerateDisparityError("disparity mean is zero; cannot mean-normalize")
    d = d / mean

    g = guide.values if guide.values.ndim == 3 else guide.values[:, :, None]
    grad_gx = np.mean(np.abs(g[:, 1:, :] - g[:, :-1, :]), axis=2)
    grad_gy = np.mean(np.abs(g[1:, :, :] - g[:-1, :, :]), axis=2)
    grad_dx = np.abs(d[:, 1:] - d[:, :-1])
    grad_dy = np.abs(d[1:, :] - d[:-1, :])

    loss = 0.0
    if grad_dx.size:
        loss += float(np.mean(grad_dx * np.exp(-grad_gx)))
    if grad_dy.size:
        loss += float(np.mean(grad_dy * np.exp(-grad_gy)))
    return loss


def total_loss(lp: float, le: float, w: LossWeights) -> float:
    """Photometric term plus lambda-weighted smoothness term."""
    return lp + w.lambda_ * le
