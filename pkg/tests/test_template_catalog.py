"""Template loading, validation, and catalog invariants."""

from __future__ import annotations

import cv2
import numpy as np
import pytest

from conftest import make_disc_template, write_template_files
from signforge.errors import ConfigError, ValidationError
from signforge.template_catalog import (
    Catalog,
    Template,
    load_catalog,
    load_catalog_file,
    parse_key_color,
    read_manifest,
)


def write_rgba_disc(path, size=64, radius=28):
    yy, xx = np.mgrid[:size, :size]
    mask = (yy - size // 2) ** 2 + (xx - size // 2) ** 2 <= radius ** 2
    bgra = np.zeros((size, size, 4), np.uint8)
    bgra[..., :3] = 180
    bgra[..., 3] = mask * 255
    cv2.imwrite(str(path), bgra)
    return int(mask.sum())


class TestLoad:
    def test_full_catalog(self, tmp_path):
        manifest = write_template_files(tmp_path, 38)
        catalog = load_catalog_file(manifest)
        assert catalog.class_count == 38
        assert sorted(catalog.templates) == list(range(1, 39))

    def test_duplicate_class_id_rejected(self, tmp_path):
        path = tmp_path / "t.png"
        write_rgba_disc(path)
        with pytest.raises(ConfigError, match="duplicate"):
            load_catalog([(path, 1, None), (path, 1, None)])

    def test_disc_alpha_count_matches_pixel_scan(self, tmp_path):
        path = tmp_path / "disc.png"
        disc_area = write_rgba_disc(path, size=64, radius=28)
        catalog = load_catalog([(path, 1, None)])
        tmpl = catalog.templates[1]
        assert tmpl.nominal_size == 64
        # oracle: recount opaque pixels straight from the file
        raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        assert int((raw[:, :, 3] > 0).sum()) == disc_area
        assert int((tmpl.alpha > 0).sum()) == disc_area

    def test_missing_alpha_without_key_color_rejected(self, tmp_path):
        path = tmp_path / "flat.png"
        cv2.imwrite(str(path), np.full((16, 16, 3), 90, np.uint8))
        with pytest.raises(ValidationError, match="key color"):
            load_catalog([(path, 1, None)])

    def test_key_color_builds_alpha(self, tmp_path):
        img = np.full((16, 16, 3), 90, np.uint8)
        img[4:12, 4:12] = (10, 20, 30)
        path = tmp_path / "keyed.png"
        cv2.imwrite(str(path), img)
        # img is BGR on disk; key color is given in RGB
        catalog = load_catalog([(path, 1, "#5a5a5a")])
        alpha = catalog.templates[1].alpha
        assert np.all(alpha[4:12, 4:12] == 1.0)
        assert np.all(alpha[0:4, :] == 0.0)

    def test_fully_transparent_rejected(self, tmp_path):
        bgra = np.zeros((8, 8, 4), np.uint8)
        bgra[..., :3] = 200
        path = tmp_path / "ghost.png"
        cv2.imwrite(str(path), bgra)
        with pytest.raises(ValidationError, match="transparent"):
            load_catalog([(path, 1, None)])

    def test_unreadable_path_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_catalog([(tmp_path / "nope.png", 1, None)])


class TestCatalogInvariants:
    def test_non_contiguous_ids_rejected(self):
        templates = {i: make_disc_template(i) for i in (1, 3)}
        templates[3] = Template(3, templates[3].rgb, templates[3].alpha, 48)
        with pytest.raises(ConfigError, match="contiguous"):
            Catalog(templates)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            Catalog({})

    def test_alpha_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            Template(1, np.zeros((8, 8, 3), np.uint8), np.ones((4, 4), np.float32), 8)


class TestManifest:
    def test_header_tolerated_and_paths_resolved(self, tmp_path):
        manifest = write_template_files(tmp_path, 3)
        entries = read_manifest(manifest)
        assert len(entries) == 3
        assert all(p.is_absolute() for p, _, _ in entries)
        assert [cid for _, cid, _ in entries] == [1, 2, 3]

    def test_key_color_column(self, tmp_path):
        (tmp_path / "m.csv").write_text("a.png,1,#ff00aa\n")
        entries = read_manifest(tmp_path / "m.csv")
        assert entries[0][2] == "#ff00aa"
        assert parse_key_color(entries[0][2]) == (255, 0, 170)

    def test_bad_key_color(self):
        with pytest.raises(ConfigError):
            parse_key_color("red")

    def test_bad_class_id(self, tmp_path):
        (tmp_path / "m.csv").write_text("a.png,2\nx.png,notanint\n")
        with pytest.raises(ConfigError, match="class_id"):
            read_manifest(tmp_path / "m.csv")
