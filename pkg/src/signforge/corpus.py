"""Background corpus ingestion: COCO-style parsing, filtering, standardization.

Natural images become compositing canvases only when they carry no
traffic-adjacent labels and are large enough; survivors are uniformly
scaled so the shortest side hits the canvas size, then center-cropped to
a square.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import IntegrityError, ParseError, ValidationError

BACKGROUND_SIZE = 1500

DEFAULT_EXCLUDED_LABELS = frozenset(
    {
        "traffic light",
        "bicycle",
        "car",
        "motorcycle",
        "bus",
        "truck",
        "fire hydrant",
        "stop sign",
        "parking meter",
    }
)

DEFAULT_MIN_WIDTH = 400
DEFAULT_MIN_HEIGHT = 600


@dataclass(frozen=True)
class ImageEntry:
    image_id: int
    file_name: str
    width: int
    height: int


@dataclass
class CocoIndex:
    """Listed images plus the set of category names present on each."""

    images: list[ImageEntry]
    label_map: dict[int, set[str]]

    def __post_init__(self):
        ids = {e.image_id for e in self.images}
        unknown = set(self.label_map) - ids
        if unknown:
            raise IntegrityError(f"label_map references unknown image ids: {sorted(unknown)}")
        for entry in self.images:
            if entry.width <= 0 or entry.height <= 0:
                raise ValidationError(
                    f"image {entry.image_id} has non-positive size "
                    f"{entry.width}x{entry.height}"
                )


@dataclass
class ExclusionPolicy:
    excluded_labels: frozenset[str] = field(default_factory=lambda: DEFAULT_EXCLUDED_LABELS)
    min_width: int = DEFAULT_MIN_WIDTH
    min_height: int = DEFAULT_MIN_HEIGHT


@dataclass
class BackgroundRecord:
    source_id: int | str
    raster: np.ndarray  # uint8, exactly (BACKGROUND_SIZE, BACKGROUND_SIZE, 3)

    def __post_init__(self):
        expected = (BACKGROUND_SIZE, BACKGROUND_SIZE, 3)
        if self.raster.shape != expected:
            raise ValidationError(
                f"background {self.source_id} has shape {self.raster.shape}, "
                f"expected {expected}"
            )


def parse_coco_annotations(document: bytes) -> CocoIndex:
    """Build a CocoIndex from a COCO-format annotation document.

    Images with no annotations map to the empty label set. Annotations
    referencing unknown image or category ids raise IntegrityError naming
    the id; malformed JSON raises ParseError with the byte offset.
    """
    try:
        obj = json.loads(document)
    except json.JSONDecodeError as exc:
        byte_offset = len(exc.doc[: exc.pos].encode("utf-8"))
        raise ParseError(f"malformed JSON at byte {byte_offset}: {exc.msg}") from exc

    for key in ("images", "annotations", "categories"):
        if key not in obj:
            raise ParseError(f"document is missing the '{key}' array")

    category_names = {}
    for cat in obj["categories"]:
        category_names[cat["id"]] = cat["name"]

    images = []
    label_map: dict[int, set[str]] = {}
    for img in obj["images"]:
        entry = ImageEntry(
            image_id=img["id"],
            file_name=img.get("file_name", ""),
            width=img["width"],
            height=img["height"],
        )
        images.append(entry)
        label_map[entry.image_id] = set()

    for ann in obj["annotations"]:
        image_id = ann["image_id"]
        category_id = ann["category_id"]
        if image_id not in label_map:
            raise IntegrityError(f"annotation references unknown image_id {image_id}")
        if category_id not in category_names:
            raise IntegrityError(f"annotation references unknown category_id {category_id}")
        label_map[image_id].add(category_names[category_id])

    return CocoIndex(images=images, label_map=label_map)


def rejection_reason(entry: ImageEntry, labels: set[str], policy: ExclusionPolicy) -> str | None:
    """Why this image is rejected, or None if accepted."""
    reasons = []
    hits = sorted(labels & set(policy.excluded_labels))
    if hits:
        reasons.append("excluded_label:" + ",".join(hits))
    if entry.width < policy.min_width or entry.height < policy.min_height:
        reasons.append(f"undersized:{entry.width}x{entry.height}")
    return "+".join(reasons) if reasons else None


def filter_backgrounds(index: CocoIndex, policy: ExclusionPolicy) -> list[int]:
    """Image ids accepted by the policy, in input order."""
    accepted = []
    for entry in index.images:
        labels = index.label_map.get(entry.image_id, set())
        if rejection_reason(entry, labels, policy) is None:
            accepted.append(entry.image_id)
    return accepted


def standardize_background(raster: np.ndarray, target: int = BACKGROUND_SIZE) -> np.ndarray:
    """Uniformly scale so min(width, height) == target, then center-crop.

    Resampling is bilinear. When the crop remainder is odd the extra pixel
    goes to the trailing side (leading offset floors), so outputs are
    byte-reproducible.
    """
    if raster.ndim == 2:
        raster = np.repeat(raster[:, :, None], 3, axis=2)
    h, w = raster.shape[:2]
    if h <= 0 or w <= 0:
        raise ValidationError("raster must have positive dimensions")
    if h <= w:
        new_h = target
        new_w = int(w * target / h + 0.5)
    else:
        new_w = target
        new_h = int(h * target / w + 0.5)
    resized = cv2.resize(raster, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    y0 = (new_h - target) // 2
    x0 = (new_w - target) // 2
    return np.ascontiguousarray(resized[y0:y0 + target, x0:x0 + target])
