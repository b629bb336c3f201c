"""Depth map container: a dense grid of depths (mm) plus a validity mask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class DepthMap:
    """H x W depth grid in millimetres with a boolean validity mask.

    Pixels with valid=False may hold any value (NaN, zero, garbage from a
    failed sensor); no operation ever reads them. Pixels with valid=True
    must be finite and strictly positive.
    """

    values: np.ndarray
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ShapeError(f"depth values must be a nonempty 2-D grid, got shape {values.shape}")
        if self.valid is None:
            valid = np.isfinite(values) & (values > 0)
        else:
            valid = np.asarray(self.valid, dtype=bool)
        if valid.shape != values.shape:
            raise ShapeError(f"valid mask shape {valid.shape} != values shape {values.shape}")
        masked = values[valid]
        if masked.size and not (np.isfinite(masked).all() and (masked > 0).all()):
            raise ValueError("valid pixels must be finite and > 0")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def n_valid(self) -> int:
        return int(self.valid.sum())
