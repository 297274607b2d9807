"""Annotation and prediction serialization.

One bbox convention everywhere: [x, y, w, h] in absolute pixels. Writers
are byte-reproducible (fixed key order, pixel coordinates as integers,
confidences rounded to 6 decimals); readers reject malformed records
instead of repairing them.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import ParseError, ValidationError

Bbox = tuple[float, float, float, float]


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: int | str
    bbox: Bbox  # (x, y, w, h)
    category_id: int

    def __post_init__(self):
        _, _, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise ValidationError(f"ground truth box must have positive size, got {self.bbox}")


@dataclass(frozen=True)
class Detection:
    image_id: int | str
    bbox: Bbox  # (x, y, w, h)
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")
        _, _, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise ValidationError(f"detection box must have positive size, got {self.bbox}")


@dataclass(frozen=True)
class ImageRecord:
    image_id: int | str
    file_name: str
    width: int
    height: int


def _int_coord(value: float) -> int:
    return int(round(value))


def write_annotations(
    images: list[ImageRecord],
    boxes: list[GroundTruthBox],
    categories: dict[int, str],
) -> tuple[bytes, bytes]:
    """Serialize to COCO-format JSON plus a flat CSV mirror.

    Returns (json_bytes, csv_bytes). Round-trips losslessly through
    read_annotations; a second write of a read document is byte-identical.
    """
    file_names = {img.image_id: img.file_name for img in images}
    doc = {
        "images": [
            {
                "id": img.image_id,
                "file_name": img.file_name,
                "width": img.width,
                "height": img.height,
            }
            for img in images
        ],
        "annotations": [
            {
                "id": i + 1,
                "image_id": box.image_id,
                "category_id": box.category_id,
                "bbox": [_int_coord(v) for v in box.bbox],
                "area": _int_coord(box.bbox[2]) * _int_coord(box.bbox[3]),
                "iscrowd": 0,
            }
            for i, box in enumerate(boxes)
        ],
        "categories": [
            {"id": cid, "name": categories[cid]} for cid in sorted(categories)
        ],
    }
    json_bytes = (json.dumps(doc, indent=2) + "\n").encode("utf-8")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["file_name", "class_id", "x", "y", "w", "h"])
    for box in boxes:
        writer.writerow(
            [file_names.get(box.image_id, ""), box.category_id]
            + [_int_coord(v) for v in box.bbox]
        )
    return json_bytes, buf.getvalue().encode("utf-8")


def read_annotations(
    document: bytes | str,
) -> tuple[list[ImageRecord], list[GroundTruthBox], dict[int, str]]:
    """Parse a COCO-format annotation document."""
    try:
        obj = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed annotation JSON: {exc.msg} at position {exc.pos}") from exc
    for key in ("images", "annotations", "categories"):
        if key not in obj:
            raise ParseError(f"annotation document is missing the '{key}' array")
    images = [
        ImageRecord(img["id"], img.get("file_name", ""), img["width"], img["height"])
        for img in obj["images"]
    ]
    boxes = [
        GroundTruthBox(ann["image_id"], tuple(ann["bbox"]), ann["category_id"])
        for ann in obj["annotations"]
    ]
    categories = {cat["id"]: cat["name"] for cat in obj["categories"]}
    return images, boxes, categories


def read_predictions(document: bytes | str, fmt: str = "auto") -> list[Detection]:
    """Parse detector output: COCO-results JSON array or its CSV equivalent.

    JSON records look like {"image_id": ..., "bbox": [x, y, w, h],
    "score": ...}; the CSV mirror has columns image_id,x,y,w,h,score.
    Order is preserved; invalid confidence or size raises ValidationError.
    """
    if isinstance(document, bytes):
        text = document.decode("utf-8")
    else:
        text = document
    if fmt == "auto":
        fmt = "json" if text.lstrip()[:1] in ("[", "{") else "csv"

    detections = []
    if fmt == "json":
        try:
            records = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed prediction JSON: {exc.msg} at position {exc.pos}") from exc
        if not isinstance(records, list):
            raise ParseError("prediction document must be a JSON array")
        for i, rec in enumerate(records):
            try:
                detections.append(
                    Detection(rec["image_id"], tuple(rec["bbox"]), float(rec["score"]))
                )
            except KeyError as exc:
                raise ParseError(f"prediction record {i} is missing field {exc}") from exc
    elif fmt == "csv":
        reader = csv.reader(io.StringIO(text))
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and row[0].strip() == "image_id":
                continue
            if len(row) != 6:
                raise ParseError(f"prediction CSV line {lineno}: expected 6 columns")
            image_id: int | str = row[0]
            if row[0].strip().lstrip("-").isdigit():
                image_id = int(row[0])
            x, y, w, h, score = (float(v) for v in row[1:6])
            detections.append(Detection(image_id, (x, y, w, h), score))
    else:
        raise ValueError(f"unknown prediction format {fmt!r}")
    return detections


def write_predictions(detections: list[Detection]) -> bytes:
    """Serialize detections as a COCO-results JSON array."""
    records = [
        {
            "image_id": det.image_id,
            "bbox": [_int_coord(v) for v in det.bbox],
            "score": round(det.confidence, 6),
        }
        for det in detections
    ]
    return (json.dumps(records, indent=2) + "\n").encode("utf-8")


def import_gtsdb_ground_truth(text: str | bytes) -> list[GroundTruthBox]:
    """Convert semicolon-separated ground truth lines to GroundTruthBox.

    Line format: file;x1;y1;x2;y2;class (corner coordinates). Boxes are
    converted to (x1, y1, x2-x1, y2-y1); class ids are kept as-is. The
    image id is the integer file stem when the stem is numeric, else the
    file name.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    boxes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(";")
        if len(parts) != 6:
            raise ParseError(f"ground truth line {lineno}: expected 6 fields, got {len(parts)}")
        name = parts[0]
        try:
            x1, y1, x2, y2 = (int(v) for v in parts[1:5])
            category = int(parts[5])
        except ValueError as exc:
            raise ParseError(f"ground truth line {lineno}: non-integer field") from exc
        stem = Path(name).stem
        image_id: int | str = int(stem) if stem.isdigit() else name
        boxes.append(
            GroundTruthBox(image_id, (x1, y1, x2 - x1, y2 - y1), category)
        )
    return boxes


def read_image_rgb(path: str | Path) -> np.ndarray:
    """Read an image file as uint8 RGB, promoting grayscale/paletted inputs."""
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise ParseError(f"cannot read image {path}")
    return cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)


def write_image_png(path: str | Path, rgb: np.ndarray) -> None:
    """Write uint8 RGB to a PNG file."""
    ok, buf = cv2.imencode(".png", cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))
    if not ok:
        raise IOError(f"PNG encoding failed for {path}")
    Path(path).write_bytes(buf.tobytes())
