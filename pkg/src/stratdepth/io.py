"""Parsers and writers for depth maps, images, manifests and reports.

All binary parsers bounds-check the header-declared payload size against the
actual byte count before allocating anything, reject trailing garbage, and
raise only typed errors on arbitrary input bytes.

Formats:

  PFM    grayscale Portable Float Map: "Pf", "W H", scale line (sign gives
         endianness, negative = little-endian), then W*H 32-bit floats
         stored bottom row first. Color "PF" files are rejected.
  PGM16  binary "P5" with maxval 65535, big-endian 16-bit samples; raw 0
         marks an invalid pixel, depth_mm = raw / scale_divisor.
  manifest  JSON array of {frame_id, pred_path, gt_path, image_path?,
         baseline_abs_rel?}; unknown fields are ignored, order preserved.
  report JSON document with the resolved configuration, per-frame and
         aggregate metrics, optional mixture parameters and clusters;
         floats serialize at full round-trip precision.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .depthmap import DepthMap
from .errors import FormatError, ManifestError, TruncatedError
from .metrics import METRIC_FIELDS, MetricSet

logger = logging.getLogger("stratdepth.io")

_WHITESPACE = b" \t\r\n"
_MAX_HEADER_BYTES = 4096


class _ByteCursor:
    """Tokenizer over header bytes; never reads past the buffer."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def next_token(self, allow_comments: bool = False) -> bytes:
        d, n = self.data, len(self.data)
        while self.pos < n and d[self.pos : self.pos + 1] in (b" ", b"\t", b"\r", b"\n"):
            self.pos += 1
        if allow_comments:
            while self.pos < n and d[self.pos : self.pos + 1] == b"#":
                nl = d.find(b"\n", self.pos)
                self.pos = n if nl < 0 else nl + 1
                while self.pos < n and d[self.pos : self.pos + 1] in (b" ", b"\t", b"\r", b"\n"):
                    self.pos += 1
        start = self.pos
        while self.pos < n and d[self.pos : self.pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
            self.pos += 1
            if self.pos - start > 64:
                raise FormatError("header token longer than 64 bytes")
        if self.pos == start:
            raise TruncatedError("file ends inside the header")
        if self.pos > _MAX_HEADER_BYTES:
            raise FormatError("header exceeds the maximum permitted size")
        return d[start : self.pos]

    def skip_one_whitespace(self) -> None:
        if self.pos >= len(self.data):
            raise TruncatedError("file ends before the payload")
        if self.data[self.pos : self.pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
            raise FormatError("expected a single whitespace byte before the payload")
        self.pos += 1


def _parse_positive_int(token: bytes, what: str) -> int:
    try:
        value = int(token.decode("ascii"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"{what} is not an integer: {token!r}") from exc
    if value <= 0:
        raise FormatError(f"{what} must be positive, got {value}")
    return value


def parse_pfm(data: bytes) -> tuple[np.ndarray, int]:
    """Decode grayscale PFM bytes into a top-to-bottom float64 grid.

    Returns (grid, count of non-finite samples). Raises FormatError for a
    bad magic, the unsupported color "PF" variant, a zero scale, or trailing
    bytes; TruncatedError when the payload is shorter than W*H floats.
    """
    cursor = _ByteCursor(data)
    magic = cursor.next_token()
    if magic == b"PF":
        raise FormatError("color PFM ('PF') is not supported; depth maps are grayscale 'Pf'")
    if magic != b"Pf":
        raise FormatError(f"bad PFM magic {magic!r}")
    width = _parse_positive_int(cursor.next_token(), "width")
    height = _parse_positive_int(cursor.next_token(), "height")
    scale_token = cursor.next_token()
    try:
        scale = float(scale_token.decode("ascii"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"scale is not a number: {scale_token!r}") from exc
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(f"scale must be finite and nonzero, got {scale}")
    cursor.skip_one_whitespace()

    expected = width * height * 4
    payload = data[cursor.pos :]
    if len(payload) < expected:
        raise TruncatedError(f"payload has {len(payload)} bytes, header implies {expected}")
    if len(payload) > expected:
        raise FormatError(f"{len(payload) - expected} trailing bytes after the declared payload")
    dtype = "<f4" if scale < 0 else ">f4"
    grid = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    with np.errstate(invalid="ignore"):  # arbitrary bytes may encode signaling NaNs
        grid = np.flipud(grid).astype(np.float64)  # stored bottom-to-top
    nonfinite = int((~np.isfinite(grid)).sum())
    return grid, nonfinite


def read_pfm(path) -> np.ndarray:
    """Parse a PFM file; logs a warning with the non-finite sample count."""
    with open(path, "rb") as f:
        data = f.read()
    grid, nonfinite = parse_pfm(data)
    if nonfinite:
        logger.warning("%s: %d non-finite samples", path, nonfinite)
    return grid


def write_pfm(path, grid: np.ndarray) -> None:
    """Write a grayscale little-endian PFM (values stored as 32-bit floats)."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError(f"PFM grid must be nonempty 2-D, got shape {grid.shape}")
    h, w = grid.shape
    payload = np.flipud(grid.astype("<f4")).tobytes()
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(payload)


def parse_pgm16(data: bytes, scale_divisor: float = 1.0) -> DepthMap:
    """Decode a binary 16-bit PGM into a DepthMap.

    Samples are big-endian with maxval 65535; raw 0 marks an invalid pixel;
    valid depths are raw / scale_divisor in mm. '#' comments are allowed in
    the header.
    """
    if not scale_divisor > 0:
        raise ValueError(f"scale_divisor must be positive, got {scale_divisor}")
    cursor = _ByteCursor(data)
    magic = cursor.next_token()
    if magic == b"P2":
        raise FormatError("ASCII PGM ('P2') is not supported; use binary 'P5'")
    if magic != b"P5":
        raise FormatError(f"bad PGM magic {magic!r}")
    width = _parse_positive_int(cursor.next_token(allow_comments=True), "width")
    height = _parse_positive_int(cursor.next_token(allow_comments=True), "height")
    maxval = _parse_positive_int(cursor.next_token(allow_comments=True), "maxval")
    if maxval != 65535:
        raise FormatError(f"16-bit PGM requires maxval 65535, got {maxval}")
    cursor.skip_one_whitespace()

    expected = width * height * 2
    payload = data[cursor.pos :]
    if len(payload) < expected:
        raise TruncatedError(f"payload has {len(payload)} bytes, header implies {expected}")
    if len(payload) > expected:
        raise FormatError(f"{len(payload) - expected} trailing bytes after the declared payload")
    raw = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    values = raw.astype(np.float64) / scale_divisor
    return DepthMap(values, raw != 0)


def read_pgm16(path, scale_divisor: float = 1.0) -> DepthMap:
    with open(path, "rb") as f:
        data = f.read()
    return parse_pgm16(data, scale_divisor)


def write_pgm16(path, raw: np.ndarray) -> None:
    """Write big-endian 16-bit binary PGM from a uint16 grid."""
    raw = np.asarray(raw)
    if raw.ndim != 2 or raw.size == 0:
        raise ValueError(f"PGM grid must be nonempty 2-D, got shape {raw.shape}")
    if raw.dtype != np.uint16:
        if (raw < 0).any() or (raw > 65535).any():
            raise ValueError("PGM16 samples must fit in uint16")
        raw = raw.astype(np.uint16)
    h, w = raw.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(raw.astype(">u2").tobytes())


def depth_from_pfm_grid(grid: np.ndarray) -> DepthMap:
    """PFM grid to DepthMap: non-positive or non-finite samples are invalid."""
    with np.errstate(invalid="ignore"):
        valid = np.isfinite(grid) & (grid > 0)
    return DepthMap(grid, valid)


@dataclass(frozen=True)
class FrameEntry:
    frame_id: str
    pred_path: str
    gt_path: str
    image_path: str | None = None
    baseline_abs_rel: float | None = None


@dataclass(frozen=True)
class FrameManifest:
    entries: tuple

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


_REQUIRED_FIELDS = ("frame_id", "pred_path", "gt_path")


def parse_manifest(text) -> FrameManifest:
    """Parse a JSON frame manifest from str or bytes."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ManifestError(f"manifest is not valid UTF-8: {exc}") from exc
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise ManifestError(f"manifest must be a JSON array, got {type(doc).__name__}")
    entries = []
    seen = set()
    for i, item in enumerate(doc):
        if not isinstance(item, dict):
            raise ManifestError(f"entry {i} must be an object, got {type(item).__name__}")
        for field_name in _REQUIRED_FIELDS:
            if field_name not in item:
                raise ManifestError(f"entry {i} is missing required field '{field_name}'")
            if not isinstance(item[field_name], str) or not item[field_name]:
                raise ManifestError(f"entry {i}: '{field_name}' must be a nonempty string")
        frame_id = item["frame_id"]
        if frame_id in seen:
            raise ManifestError(f"duplicate frame_id '{frame_id}'")
        seen.add(frame_id)
        image_path = item.get("image_path")
        if image_path is not None and (not isinstance(image_path, str) or not image_path):
            raise ManifestError(f"entry {i}: 'image_path' must be a nonempty string when present")
        baseline = item.get("baseline_abs_rel")
        if baseline is not None:
            if isinstance(baseline, bool) or not isinstance(baseline, (int, float)) or not np.isfinite(baseline):
                raise ManifestError(f"entry {i}: 'baseline_abs_rel' must be a finite number")
            baseline = float(baseline)
        entries.append(
            FrameEntry(
                frame_id=frame_id,
                pred_path=item["pred_path"],
                gt_path=item["gt_path"],
                image_path=image_path,
                baseline_abs_rel=baseline,
            )
        )
    return FrameManifest(tuple(entries))


def read_manifest(path) -> FrameManifest:
    with open(path, "rb") as f:
        return parse_manifest(f.read())


def write_manifest(path, manifest: FrameManifest) -> None:
    doc = []
    for e in manifest:
        item = {"frame_id": e.frame_id, "pred_path": e.pred_path, "gt_path": e.gt_path}
        if e.image_path is not None:
            item["image_path"] = e.image_path
        if e.baseline_abs_rel is not None:
            item["baseline_abs_rel"] = e.baseline_abs_rel
        doc.append(item)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def report_to_json_bytes(report: dict) -> bytes:
    """Deterministic JSON serialization (insertion order, repr floats)."""
    return (json.dumps(report, indent=2, allow_nan=False) + "\n").encode("utf-8")


def write_report(path, report: dict) -> None:
    with open(path, "wb") as f:
        f.write(report_to_json_bytes(report))


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_metrics_csv(path, clusters: dict[str, tuple[int, MetricSet | None]]) -> None:
    """Flatten per-cluster metrics to one CSV row per (cluster, metric)."""
    lines = ["cluster,count,metric,value"]
    for name, (count, metric_set) in clusters.items():
        values = metric_set.to_dict() if metric_set is not None else None
        for field_name in METRIC_FIELDS:
            cell = "" if values is None else repr(values[field_name])
            lines.append(f"{name},{count},{field_name},{cell}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_depth(path, scale_divisor: float = 1.0) -> DepthMap:
    """Dispatch on extension: .pfm float depth, .pgm 16-bit integer depth."""
    lower = str(path).lower()
    if lower.endswith(".pfm"):
        return depth_from_pfm_grid(read_pfm(path))
    if lower.endswith(".pgm"):
        return read_pgm16(path, scale_divisor)
    raise FormatError(f"unsupported depth file extension: {path}")
