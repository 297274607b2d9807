"""Shared fixtures: synthetic templates, backgrounds, and COCO documents."""

from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np
import pytest

from signforge.template_catalog import Catalog, Template


def make_disc_template(class_id: int, size: int = 48) -> Template:
    """A sign-like colored disc with a ring, transparent corners."""
    yy, xx = np.mgrid[:size, :size]
    r = size // 2 - 2
    dist2 = (yy - size // 2) ** 2 + (xx - size // 2) ** 2
    mask = dist2 <= r * r
    rgb = np.zeros((size, size, 3), np.uint8)
    rgb[..., 0] = (40 + 23 * class_id) % 256
    rgb[..., 1] = (220 - 17 * class_id) % 256
    rgb[..., 2] = (90 + 41 * class_id) % 256
    ring = (dist2 <= r * r) & (dist2 >= (r - 4) ** 2)
    rgb[ring] = (200, 30, 30)
    return Template(class_id, rgb, mask.astype(np.float32), size)


def make_catalog(n_classes: int, size: int = 48) -> Catalog:
    return Catalog({i: make_disc_template(i, size) for i in range(1, n_classes + 1)})


def write_template_files(directory: Path, n_classes: int, size: int = 48) -> Path:
    """Write RGBA template PNGs plus a manifest CSV; returns the manifest path."""
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["path,class_id"]
    for cid in range(1, n_classes + 1):
        tmpl = make_disc_template(cid, size)
        bgra = np.dstack(
            [tmpl.rgb[:, :, ::-1], (tmpl.alpha * 255).astype(np.uint8)]
        )
        path = directory / f"sign_{cid:02d}.png"
        cv2.imwrite(str(path), bgra)
        lines.append(f"{path.name},{cid}")
    manifest = directory / "templates.csv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def make_background(seed: int = 0, value: int | None = None) -> np.ndarray:
    if value is not None:
        return np.full((1500, 1500, 3), value, np.uint8)
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (1500, 1500, 3), dtype=np.uint8)


def make_smooth_background(seed: int, size: int = 1500) -> np.ndarray:
    """Low-frequency scene-like raster; compresses far better than noise."""
    rng = np.random.default_rng(seed)
    small = rng.integers(0, 256, (12, 12, 3), dtype=np.uint8)
    return cv2.resize(small, (size, size), interpolation=cv2.INTER_LINEAR)


def coco_document(
    images: list[tuple[int, str, int, int]],
    annotations: list[tuple[int, int]],
    categories: list[tuple[int, str]],
) -> bytes:
    """Build a COCO-format document from (id, name, w, h), (image_id,
    category_id), and (id, name) tuples."""
    return json.dumps(
        {
            "images": [
                {"id": i, "file_name": n, "width": w, "height": h}
                for i, n, w, h in images
            ],
            "annotations": [
                {"id": k + 1, "image_id": img, "category_id": cat,
                 "bbox": [0, 0, 10, 10], "area": 100, "iscrowd": 0}
                for k, (img, cat) in enumerate(annotations)
            ],
            "categories": [{"id": i, "name": n} for i, n in categories],
        }
    ).encode("utf-8")


@pytest.fixture
def small_catalog() -> Catalog:
    return make_catalog(5)
