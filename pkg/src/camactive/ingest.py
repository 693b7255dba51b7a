"""Post-processing of pretrained-detector output.

Covers the confidence-threshold rule for empty images, animal counting and
count binning, bounding-box crop extraction, and the binary / counting
evaluation metrics.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


class IngestError(Exception):
    """Base class for detection-ingest failures."""


class DetectionParseError(IngestError):
    """Raised when a detection file cannot be parsed."""


class ValidationError(IngestError):
    """Raised when a record violates its invariants."""


# Count bins: 1..10 are singletons, then 11-50, then 51+.
COUNT_BIN_LABELS = [str(i) for i in range(1, 11)] + ["11-50", "51+"]


@dataclass(frozen=True)
class DetectionRecord:
    """One detector hit: a normalized box plus its confidence."""

    image_id: str
    bbox: tuple[float, float, float, float]  # (x_min, y_min, width, height)
    confidence: float

    def validate(self) -> None:
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise ValidationError(
                f"image {self.image_id!r}: bbox width/height must be positive, got {self.bbox}"
            )
        if x < 0 or y < 0 or x + w > 1 + 1e-12 or y + h > 1 + 1e-12:
            raise ValidationError(
                f"image {self.image_id!r}: bbox {self.bbox} outside the unit square"
            )
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(
                f"image {self.image_id!r}: confidence {self.confidence} outside [0, 1]"
            )


@dataclass(frozen=True)
class GroundTruth:
    label: Optional[str]
    count: Optional[int]
    empty: bool

    def validate(self) -> None:
        if not self.empty and (self.count is None or self.count < 1):
            raise ValidationError(
                f"non-empty ground truth needs count >= 1, got {self.count}"
            )


@dataclass
class ImageEntry:
    image_id: str
    source_path: str
    width: Optional[int] = None
    height: Optional[int] = None
    sequence_id: Optional[str] = None
    truth: Optional[GroundTruth] = None

    def validate(self) -> None:
        if self.width is not None and self.width <= 0:
            raise ValidationError(f"image {self.image_id!r}: width must be positive")
        if self.height is not None and self.height <= 0:
            raise ValidationError(f"image {self.image_id!r}: height must be positive")
        if self.truth is not None:
            self.truth.validate()


@dataclass(frozen=True)
class IngestConfig:
    confidence_threshold: float = 0.90
    crop_side: int = 256

    def __post_init__(self):
        if not (0.0 < self.confidence_threshold <= 1.0):
            raise ValidationError(
                f"confidence_threshold must be in (0, 1], got {self.confidence_threshold}"
            )
        if self.crop_side < 8:
            raise ValidationError(f"crop_side must be >= 8, got {self.crop_side}")


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts with 'animal' as the positive class."""

    true_positive: int
    false_positive: int
    true_negative: int
    false_negative: int

    def __post_init__(self):
        for name in ("true_positive", "false_positive", "true_negative", "false_negative"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return (
            self.true_positive
            + self.false_positive
            + self.true_negative
            + self.false_negative
        )


@dataclass
class Crop:
    crop_id: str
    image_id: str
    source_bbox_px: tuple[int, int, int, int]  # (x, y, w, h) in source pixels
    pixels: np.ndarray  # (crop_side, crop_side, 3)


def parse_detection_file(data: bytes) -> list[tuple[ImageEntry, list[DetectionRecord]]]:
    """Parse a detector output file (UTF-8 JSON, MegaDetector-style schema).

    Confidences are kept untouched and detections stay in file order;
    thresholding happens later in `filter_detections`.
    """
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        if isinstance(exc, json.JSONDecodeError):
            raise DetectionParseError(
                f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
        raise DetectionParseError(f"detection file is not UTF-8: {exc}") from exc
    if not isinstance(doc, dict) or "images" not in doc:
        raise DetectionParseError('detection file must be an object with an "images" array')
    images = doc["images"]
    if not isinstance(images, list):
        raise DetectionParseError('"images" must be an array')

    out: list[tuple[ImageEntry, list[DetectionRecord]]] = []
    for i, rec in enumerate(images):
        if not isinstance(rec, dict) or "file" not in rec:
            raise DetectionParseError(f'images[{i}] is missing the "file" field')
        image_id = str(rec["file"])
        entry = ImageEntry(
            image_id=image_id,
            source_path=image_id,
            width=rec.get("width"),
            height=rec.get("height"),
            sequence_id=rec.get("seq_id"),
        )
        entry.validate()
        dets: list[DetectionRecord] = []
        for j, d in enumerate(rec.get("detections", []) or []):
            try:
                bbox = tuple(float(v) for v in d["bbox"])
                conf = float(d["conf"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DetectionParseError(
                    f"images[{i}].detections[{j}] (image {image_id!r}) is malformed: {exc}"
                ) from exc
            if len(bbox) != 4:
                raise DetectionParseError(
                    f"images[{i}].detections[{j}] (image {image_id!r}): bbox needs 4 values"
                )
            det = DetectionRecord(image_id=image_id, bbox=bbox, confidence=conf)
            det.validate()
            dets.append(det)
        out.append((entry, dets))
    return out


def filter_detections(
    dets: list[DetectionRecord], cfg: IngestConfig = IngestConfig()
) -> list[DetectionRecord]:
    """Keep detections at or above the confidence threshold, in order.

    The boundary is inclusive: confidence == threshold is kept.
    """
    return [d for d in dets if d.confidence >= cfg.confidence_threshold]


def classify_empty(dets: list[DetectionRecord], cfg: IngestConfig = IngestConfig()) -> str:
    """Return "animal" if any detection survives the threshold, else "empty"."""
    return "animal" if filter_detections(dets, cfg) else "empty"


def count_animals(dets: list[DetectionRecord], cfg: IngestConfig = IngestConfig()) -> int:
    return len(filter_detections(dets, cfg))


def bin_count(count: int) -> str:
    """Map a positive animal count to its count bin label."""
    if count < 1:
        raise ValidationError(f"count must be >= 1 to be binned, got {count}")
    if count <= 10:
        return str(count)
    if count <= 50:
        return "11-50"
    return "51+"


def bin_index(count: int) -> int:
    """Ordinal index of the count's bin (0-based over COUNT_BIN_LABELS)."""
    return COUNT_BIN_LABELS.index(bin_count(count))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def crop_and_resize(
    image: np.ndarray,
    bbox: tuple[float, float, float, float],
    cfg: IngestConfig = IngestConfig(),
    image_id: str = "",
    crop_id: str = "",
) -> Crop:
    """Extract a normalized bbox and resize it to crop_side x crop_side.

    The pixel rectangle comes from rounding each normalized coordinate
    independently (half-up). Resampling is bilinear with corner-aligned
    sampling, so identity resizes and constant-color inputs are exact.
    Aspect ratio is not preserved.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected an (H, W, 3) image, got shape {image.shape}")
    h_img, w_img = image.shape[:2]
    if h_img == 0 or w_img == 0:
        raise ValidationError("degenerate source image")
    x_min, y_min, bw, bh = bbox
    rx = _round_half_up(x_min * w_img)
    ry = _round_half_up(y_min * h_img)
    rw = _round_half_up(bw * w_img)
    rh = _round_half_up(bh * h_img)
    # Independent rounding can overshoot the far edge by one pixel.
    rx = min(max(rx, 0), w_img)
    ry = min(max(ry, 0), h_img)
    rw = min(rw, w_img - rx)
    rh = min(rh, h_img - ry)
    if rw <= 0 or rh <= 0:
        raise ValidationError(
            f"bbox {bbox} rounds to a zero-area pixel rectangle on a {w_img}x{h_img} image"
        )
    region = image[ry : ry + rh, rx : rx + rw, :].astype(np.float64)
    pixels = resize_bilinear(region, cfg.crop_side, cfg.crop_side)
    return Crop(
        crop_id=crop_id,
        image_id=image_id,
        source_bbox_px=(rx, ry, rw, rh),
        pixels=pixels,
    )


def crop_rect_px(
    bbox: tuple[float, float, float, float], width: int, height: int
) -> tuple[int, int, int, int]:
    """Pixel rectangle (x, y, w, h) a normalized bbox rounds to."""
    x_min, y_min, bw, bh = bbox
    return (
        _round_half_up(x_min * width),
        _round_half_up(y_min * height),
        _round_half_up(bw * width),
        _round_half_up(bh * height),
    )


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an (H, W, C) array.

    Source position for destination index i is i * (src-1) / (dst-1); a
    single-row or single-column source maps everywhere to that row/column.
    """
    image = np.asarray(image, dtype=np.float64)
    src_h, src_w = image.shape[:2]

    def positions(src_len: int, dst_len: int) -> np.ndarray:
        if src_len == 1 or dst_len == 1:
            return np.zeros(dst_len)
        return np.arange(dst_len) * (src_len - 1) / (dst_len - 1)

    ys = positions(src_h, out_h)
    xs = positions(src_w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bot = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def binary_metrics(c: ConfusionCounts) -> dict:
    """Accuracy / precision / recall; a zero denominator yields None."""
    if c.total == 0:
        raise ValidationError("confusion counts are all zero")
    tp, fp, tn, fn = c.true_positive, c.false_positive, c.true_negative, c.false_negative
    return {
        "accuracy": (tp + tn) / c.total,
        "precision": tp / (tp + fp) if (tp + fp) > 0 else None,
        "recall": tp / (tp + fn) if (tp + fn) > 0 else None,
    }


def count_metrics(predicted: list[int], truth: list[int]) -> dict:
    """Binned counting accuracy: exact-bin and within-one-bin fractions."""
    if len(predicted) != len(truth):
        raise ValidationError(
            f"predicted has {len(predicted)} entries but truth has {len(truth)}"
        )
    if not predicted:
        raise ValidationError("empty count lists")
    pred_idx = [bin_index(p) for p in predicted]
    true_idx = [bin_index(t) for t in truth]
    n = len(predicted)
    top1 = sum(p == t for p, t in zip(pred_idx, true_idx)) / n
    within = sum(abs(p - t) <= 1 for p, t in zip(pred_idx, true_idx)) / n
    return {"top1_accuracy": top1, "within_one_bin_accuracy": within}


# -- ground-truth and crop-index CSV formats --


def read_ground_truth_csv(text: str) -> dict[str, GroundTruth]:
    """Parse the image_id,label,count,empty ground-truth CSV."""
    reader = csv.DictReader(io.StringIO(text))
    required = {"image_id", "label", "count", "empty"}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise ValidationError(
            f"ground-truth CSV must have header image_id,label,count,empty, got {reader.fieldnames}"
        )
    out: dict[str, GroundTruth] = {}
    for row in reader:
        empty = row["empty"].strip().lower() in ("1", "true", "yes")
        count = int(row["count"]) if row["count"].strip() else None
        gt = GroundTruth(label=row["label"] or None, count=count, empty=empty)
        gt.validate()
        out[row["image_id"]] = gt
    return out


def write_crop_index_csv(crops: list[Crop], confidences: list[float]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["crop_id", "image_id", "x", "y", "w", "h", "conf"])
    for crop, conf in zip(crops, confidences):
        x, y, w, h = crop.source_bbox_px
        writer.writerow([crop.crop_id, crop.image_id, x, y, w, h, conf])
    return buf.getvalue()
