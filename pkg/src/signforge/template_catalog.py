"""Sign template loading and the class-indexed catalog.

Templates are graphic sign definitions with transparency. Opacity comes
from a native alpha channel when the file has one, otherwise from an
explicit key color declared in the manifest; there is no silent
background-guessing heuristic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import ConfigError, ValidationError
from .imageops import Rgba


@dataclass
class Template:
    class_id: int
    rgb: np.ndarray    # uint8, (H, W, 3)
    alpha: np.ndarray  # float32, (H, W), values in [0, 1]
    nominal_size: int  # max(width, height)

    def __post_init__(self):
        if self.alpha.shape != self.rgb.shape[:2]:
            raise ValidationError(
                f"template {self.class_id}: alpha shape {self.alpha.shape} "
                f"does not match rgb {self.rgb.shape[:2]}"
            )
        if not np.any(self.alpha > 0):
            raise ValidationError(f"template {self.class_id} is fully transparent")

    def to_rgba(self) -> Rgba:
        return Rgba(self.rgb, self.alpha)


@dataclass
class Catalog:
    """One template per class, class ids contiguous 1..M."""

    templates: dict[int, Template]

    def __post_init__(self):
        ids = sorted(self.templates)
        if ids != list(range(1, len(ids) + 1)):
            raise ConfigError(f"class ids must be contiguous 1..M, got {ids}")
        if not ids:
            raise ConfigError("catalog is empty")

    @property
    def class_count(self) -> int:
        return len(self.templates)


def parse_key_color(text: str) -> tuple[int, int, int]:
    """Parse an '#RRGGBB' hex key color."""
    text = text.strip()
    if not text.startswith("#") or len(text) != 7:
        raise ConfigError(f"key color must look like '#RRGGBB', got {text!r}")
    try:
        return tuple(int(text[i:i + 2], 16) for i in (1, 3, 5))  # type: ignore[return-value]
    except ValueError as exc:
        raise ConfigError(f"invalid key color {text!r}") from exc


def read_manifest(path: str | Path) -> list[tuple[Path, int, str | None]]:
    """Read a template manifest CSV: path, class_id[, key_color].

    Relative template paths resolve against the manifest's directory. A
    header row is tolerated.
    """
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="") as handle:
        for lineno, row in enumerate(csv.reader(handle), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and not row[1].strip().isdigit():
                continue  # header
            if len(row) < 2:
                raise ConfigError(f"{path}:{lineno}: expected 'path,class_id[,key_color]'")
            tmpl_path = Path(row[0].strip())
            if not tmpl_path.is_absolute():
                tmpl_path = base / tmpl_path
            try:
                class_id = int(row[1])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: class_id must be an integer") from exc
            key = row[2].strip() if len(row) > 2 and row[2].strip() else None
            entries.append((tmpl_path, class_id, key))
    return entries


def _load_template_image(path: Path, key_color: str | None) -> tuple[np.ndarray, np.ndarray]:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ConfigError(f"cannot read template image {path}")
    if raw.ndim == 2:
        raw = cv2.cvtColor(raw, cv2.COLOR_GRAY2BGR)
    if raw.shape[2] == 4:
        rgb = cv2.cvtColor(raw, cv2.COLOR_BGRA2RGB)
        alpha = (raw[:, :, 3].astype(np.float32) / 255.0)
        return rgb, alpha
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    if key_color is None:
        raise ValidationError(
            f"template {path} has no alpha channel and no key color was given"
        )
    key = np.array(parse_key_color(key_color), dtype=np.uint8)
    alpha = (rgb != key).any(axis=2).astype(np.float32)
    return rgb, alpha


def load_catalog(entries: list[tuple[Path, int, str | None]]) -> Catalog:
    """Load and validate all templates; stored at native resolution."""
    templates: dict[int, Template] = {}
    for path, class_id, key_color in entries:
        if class_id in templates:
            raise ConfigError(f"duplicate class_id {class_id} ({path})")
        rgb, alpha = _load_template_image(Path(path), key_color)
        templates[class_id] = Template(
            class_id=class_id,
            rgb=rgb,
            alpha=alpha,
            nominal_size=max(rgb.shape[0], rgb.shape[1]),
        )
    return Catalog(templates)


def load_catalog_file(manifest_path: str | Path) -> Catalog:
    return load_catalog(read_manifest(manifest_path))
