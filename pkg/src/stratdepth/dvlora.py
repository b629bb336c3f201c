"""Low-rank adapted linear layer with learnable diagonal scaling vectors.

The effective weight is

    W = w0 + diag(lambda_v) @ b @ diag(lambda_u) @ a

with w0 (d_out x d_in) frozen, a (rank x d_in) and b (d_out x rank) the
low-rank factors, and lambda_u (rank) / lambda_v (d_out) the scaling
vectors. The diagonals are applied as row scalings, never materialized; the
forward pass runs through the factored path so the extra cost over the
frozen layer is O(rank * (d_in + d_out)) per input column.

Gradients are analytic for the scalar objective <upstream, forward(x)> and
cover exactly the four trainable tensors; w0 has no gradient by
construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, RankError, ShapeError

LAYER_BUNDLE_MAGIC = "dvlora-layer"
LAYER_BUNDLE_VERSION = 1


@dataclass(frozen=True)
class DvLoraLayer:
    """Frozen base matrix plus the four trainable adapter tensors."""

    w0: np.ndarray
    a: np.ndarray
    b: np.ndarray
    lambda_u: np.ndarray
    lambda_v: np.ndarray

    def __post_init__(self):
        w0 = np.asarray(self.w0, dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        lambda_u = np.asarray(self.lambda_u, dtype=np.float64)
        lambda_v = np.asarray(self.lambda_v, dtype=np.float64)
        if w0.ndim != 2:
            raise ShapeError(f"w0 must be 2-D, got {w0.shape}")
        d_out, d_in = w0.shape
        rank = a.shape[0] if a.ndim == 2 else -1
        if a.shape != (rank, d_in):
            raise ShapeError(f"a must be (rank, {d_in}), got {a.shape}")
        if b.shape != (d_out, rank):
            raise ShapeError(f"b must be ({d_out}, rank), got {b.shape}")
        if lambda_u.shape != (rank,):
            raise ShapeError(f"lambda_u must be ({rank},), got {lambda_u.shape}")
        if lambda_v.shape != (d_out,):
            raise ShapeError(f"lambda_v must be ({d_out},), got {lambda_v.shape}")
        if not 1 <= rank <= min(d_in, d_out):
            raise RankError(f"rank {rank} outside [1, {min(d_in, d_out)}]")
        for name, t in (("w0", w0), ("a", a), ("b", b), ("lambda_u", lambda_u), ("lambda_v", lambda_v)):
            if not np.isfinite(t).all():
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lambda_u", lambda_u)
        object.__setattr__(self, "lambda_v", lambda_v)

    @property
    def d_out(self) -> int:
        return self.w0.shape[0]

    @property
    def d_in(self) -> int:
        return self.w0.shape[1]

    @property
    def rank(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True)
class DvLoraGrads:
    """Gradients for the trainable tensors only; w0 is deliberately absent."""

    a: np.ndarray
    b: np.ndarray
    lambda_u: np.ndarray
    lambda_v: np.ndarray


def init_layer(w0: np.ndarray, rank: int, seed: int = 0) -> DvLoraLayer:
    """Fresh adapter around a frozen w0: Gaussian a scaled by 1/sqrt(d_in),
    zero b, all-ones scaling vectors, so the effective weight starts at w0
    exactly."""
    w0 = np.asarray(w0, dtype=np.float64)
    if w0.ndim != 2:
        raise ShapeError(f"w0 must be 2-D, got {w0.shape}")
    d_out, d_in = w0.shape
    if not 1 <= rank <= min(d_in, d_out):
        raise RankError(f"rank {rank} outside [1, {min(d_in, d_out)}]")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((rank, d_in)) / np.sqrt(d_in)
    return DvLoraLayer(
        w0=w0,
        a=a,
        b=np.zeros((d_out, rank)),
        lambda_u=np.ones(rank),
        lambda_v=np.ones(d_out),
    )


def adapter_delta(layer: DvLoraLayer) -> np.ndarray:
    """The update term diag(lambda_v) b diag(lambda_u) a on its own,
    computed via row/column scaling without materializing diagonals."""
    delta = (layer.b * layer.lambda_u[None, :]) @ layer.a
    return delta * layer.lambda_v[:, None]


def effective_weight(layer: DvLoraLayer) -> np.ndarray:
    """w0 + diag(lambda_v) b diag(lambda_u) a."""
    return layer.w0 + adapter_delta(layer)


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ShapeError(f"{what} length {x.shape[0]} != {dim}")
        return x[:, None], True
    if x.ndim == 2:
        if x.shape[0] != dim:
            raise ShapeError(f"{what} has {x.shape[0]} rows, expected {dim}")
        return x, False
    raise ShapeError(f"{what} must be a vector or a (dim, batch) matrix, got {x.shape}")


def forward(layer: DvLoraLayer, x: np.ndarray) -> np.ndarray:
    """Apply the adapted layer to a vector or to columns of a batch matrix.

    Computed as w0 @ x + lambda_v * (b @ (lambda_u * (a @ x))), which equals
    effective_weight(layer) @ x up to roundoff without ever forming the
    dense update.
    """
    xb, squeeze = _as_batch(x, layer.d_in, "input")
    z = layer.a @ xb
    s = z * layer.lambda_u[:, None]
    m = layer.b @ s
    y = layer.w0 @ xb + m * layer.lambda_v[:, None]
    return y[:, 0] if squeeze else y


def gradients(layer: DvLoraLayer, x: np.ndarray, upstream: np.ndarray) -> DvLoraGrads:
    """Analytic gradients of sum(upstream * forward(x)) for the four
    trainable tensors."""
    xb, x_vec = _as_batch(x, layer.d_in, "input")
    ub, u_vec = _as_batch(upstream, layer.d_out, "upstream")
    if xb.shape[1] != ub.shape[1] or x_vec != u_vec:
        raise ShapeError(f"input batch {xb.shape[1]} != upstream batch {ub.shape[1]}")

    z = layer.a @ xb                       # (r, k)
    s = z * layer.lambda_u[:, None]        # (r, k)
    m = layer.b @ s                        # (d_out, k)

    grad_lambda_v = (ub * m).sum(axis=1)               # dL/dm_i = u_i * lv_i
    dm = ub * layer.lambda_v[:, None]                  # (d_out, k)
    grad_b = dm @ s.T                                  # (d_out, r)
    ds = layer.b.T @ dm                                # (r, k)
    grad_lambda_u = (ds * z).sum(axis=1)               # (r,)
    dz = ds * layer.lambda_u[:, None]                  # (r, k)
    grad_a = dz @ xb.T                                 # (r, d_in)
    return DvLoraGrads(a=grad_a, b=grad_b, lambda_u=grad_lambda_u, lambda_v=grad_lambda_v)


def trainable_param_count(d_in: int, d_out: int, rank: int) -> int:
    """Scalar count for a + b + lambda_u + lambda_v at the given shapes."""
    if not 1 <= rank <= min(d_in, d_out):
        raise RankError(f"rank {rank} outside [1, {min(d_in, d_out)}]")
    return rank * d_in + d_out * rank + rank + d_out


def merge(layer: DvLoraLayer) -> tuple[np.ndarray, np.ndarray]:
    """Fold the adapter into a dense matrix; returns (merged, delta) with
    delta = merged - w0 so unmerge can subtract it back out.

    Recovery by unmerge is bit-exact whenever each update entry is at most
    half the matching base entry in magnitude (the practical small-update
    regime, where the subtractions are exact); otherwise it is correct to
    one ulp of merged.
    """
    merged = effective_weight(layer)
    delta = merged - layer.w0
    return merged, delta


def unmerge(merged: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Recover the base weight from a merged matrix and its stored delta."""
    return np.asarray(merged, dtype=np.float64) - np.asarray(delta, dtype=np.float64)


def finite_difference_check(
    layer: DvLoraLayer,
    x: np.ndarray,
    upstream: np.ndarray,
    step: float = 1e-5,
) -> dict[str, float]:
    """Relative error of every analytic gradient against central differences.

    The objective sum(upstream * forward(x)) is multilinear in the trainable
    tensors, so central differences are exact up to roundoff. Returns the
    per-tensor relative error max|analytic - numeric| normalized by
    max(|analytic|_inf, |numeric|_inf, 1).
    """

    def objective(candidate: DvLoraLayer) -> float:
        return float(np.sum(np.asarray(upstream, dtype=np.float64) * forward(candidate, x)))

    analytic = gradients(layer, x, upstream)
    errors: dict[str, float] = {}
    for name in ("a", "b", "lambda_u", "lambda_v"):
        base = getattr(layer, name)
        numeric = np.zeros_like(base)
        flat = numeric.reshape(-1)
        for i in range(base.size):
            bumped = base.copy().reshape(-1)
            bumped[i] += step
            plus = objective(_replace_tensor(layer, name, bumped.reshape(base.shape)))
            bumped[i] -= 2 * step
            minus = objective(_replace_tensor(layer, name, bumped.reshape(base.shape)))
            flat[i] = (plus - minus) / (2 * step)
        got = getattr(analytic, name)
        scale = max(np.abs(got).max(), np.abs(numeric).max(), 1.0)
        errors[name] = float(np.abs(got - numeric).max() / scale)
    return errors


def _replace_tensor(layer: DvLoraLayer, name: str, value: np.ndarray) -> DvLoraLayer:
    parts = {n: getattr(layer, n) for n in ("w0", "a", "b", "lambda_u", "lambda_v")}
    parts[name] = value
    return DvLoraLayer(**parts)


def save_layer(path, layer: DvLoraLayer) -> None:
    """Write the layer as a versioned JSON tensor bundle (shapes plus
    row-major values, full float precision)."""
    doc = {
        "format": LAYER_BUNDLE_MAGIC,
        "version": LAYER_BUNDLE_VERSION,
        "tensors": {
            name: {
                "shape": list(getattr(layer, name).shape),
                "data": [float(v) for v in getattr(layer, name).ravel()],
            }
            for name in ("w0", "a", "b", "lambda_u", "lambda_v")
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_layer(path) -> DvLoraLayer:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if not isinstance(doc, dict) or doc.get("format") != LAYER_BUNDLE_MAGIC:
        raise FormatError(f"not a {LAYER_BUNDLE_MAGIC} bundle")
    if doc.get("version") != LAYER_BUNDLE_VERSION:
        raise FormatError(f"unsupported bundle version {doc.get('version')!r}")
    tensors = {}
    for name in ("w0", "a", "b", "lambda_u", "lambda_v"):
        entry = doc["tensors"][name]
        tensors[name] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return DvLoraLayer(**tensors)
