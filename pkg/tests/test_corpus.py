"""COCO parsing, exclusion filtering, and background standardization."""

from __future__ import annotations

import json

import cv2
import numpy as np
import pytest

from conftest import coco_document
from signforge.corpus import (
    ExclusionPolicy,
    filter_backgrounds,
    parse_coco_annotations,
    rejection_reason,
    standardize_background,
)
from signforge.errors import IntegrityError, ParseError, ValidationError


class TestParse:
    def test_single_image_single_annotation(self):
        doc = coco_document(
            images=[(7, "a.jpg", 800, 600)],
            annotations=[(7, 1)],
            categories=[(1, "stop sign")],
        )
        index = parse_coco_annotations(doc)
        assert [(e.image_id, e.width, e.height) for e in index.images] == [(7, 800, 600)]
        assert index.label_map == {7: {"stop sign"}}

    def test_image_without_annotations_maps_to_empty_set(self):
        doc = coco_document(images=[(3, "b.jpg", 640, 480)], annotations=[], categories=[])
        assert parse_coco_annotations(doc).label_map == {3: set()}

    def test_fixture_against_independent_walker(self):
        images = [(i, f"im{i}.jpg", 700 + i, 610 + i) for i in range(1, 6)]
        annotations = [(1, 1), (1, 2), (2, 2), (3, 1), (3, 2), (3, 3), (4, 3), (5, 1), (5, 3)]
        categories = [(1, "dog"), (2, "car"), (3, "kite")]
        doc = coco_document(images, annotations, categories)
        index = parse_coco_annotations(doc)

        # oracle: plain dict walk, no shared code with the parser
        raw = json.loads(doc.decode("utf-8"))
        names = {}
        for cat in raw["categories"]:
            names[cat["id"]] = cat["name"]
        expected: dict[int, set[str]] = {img["id"]: set() for img in raw["images"]}
        for ann in raw["annotations"]:
            expected[ann["image_id"]].add(names[ann["category_id"]])

        assert len(index.images) == 5
        assert index.label_map == expected

    def test_malformed_json_reports_byte_offset(self):
        with pytest.raises(ParseError, match=r"byte \d+"):
            parse_coco_annotations(b'{"images": [,]}')

    def test_unknown_image_id_named(self):
        doc = coco_document(images=[(1, "a.jpg", 700, 700)], annotations=[(99, 1)],
                            categories=[(1, "dog")])
        with pytest.raises(IntegrityError, match="99"):
            parse_coco_annotations(doc)

    def test_unknown_category_id_named(self):
        doc = coco_document(images=[(1, "a.jpg", 700, 700)], annotations=[(1, 42)],
                            categories=[(1, "dog")])
        with pytest.raises(IntegrityError, match="42"):
            parse_coco_annotations(doc)

    def test_missing_array_rejected(self):
        with pytest.raises(ParseError, match="categories"):
            parse_coco_annotations(b'{"images": [], "annotations": []}')

    def test_nonpositive_size_rejected(self):
        doc = coco_document(images=[(1, "a.jpg", 0, 700)], annotations=[], categories=[])
        with pytest.raises(ValidationError):
            parse_coco_annotations(doc)


def _index(entries):
    """entries: (id, w, h, labels)"""
    images = [(i, f"{i}.jpg", w, h) for i, w, h, _ in entries]
    categories = sorted({name for *_, labels in entries for name in labels})
    cat_ids = {name: k + 1 for k, name in enumerate(categories)}
    annotations = [
        (i, cat_ids[name]) for i, _, _, labels in entries for name in labels
    ]
    return parse_coco_annotations(
        coco_document(images, annotations, [(v, k) for k, v in cat_ids.items()])
    )


class TestFilter:
    def test_small_height_rejected(self):
        index = _index([(1, 640, 480, set())])
        assert filter_backgrounds(index, ExclusionPolicy()) == []

    def test_plain_image_accepted(self):
        index = _index([(1, 800, 600, {"dog"})])
        assert filter_backgrounds(index, ExclusionPolicy()) == [1]

    def test_excluded_label_rejected(self):
        index = _index([(1, 1360, 800, {"car", "dog"})])
        assert filter_backgrounds(index, ExclusionPolicy()) == []

    @pytest.mark.parametrize(
        "width,height,accepted",
        [(400, 600, True), (399, 600, False), (400, 599, False), (401, 601, True)],
    )
    def test_size_boundaries(self, width, height, accepted):
        index = _index([(1, width, height, set())])
        result = filter_backgrounds(index, ExclusionPolicy())
        assert (result == [1]) is accepted

    def test_order_preserved_and_pure(self):
        entries = [(5, 700, 700, set()), (2, 900, 900, {"kite"}), (9, 800, 777, set())]
        index = _index(entries)
        first = filter_backgrounds(index, ExclusionPolicy())
        second = filter_backgrounds(index, ExclusionPolicy())
        assert first == second == [5, 2, 9]

    def test_accepted_subset_passes_predicates_independently(self):
        rng = np.random.default_rng(0)
        entries = []
        pool = ["car", "dog", "bus", "kite", "truck", "cat"]
        for i in range(40):
            labels = set(rng.choice(pool, size=rng.integers(0, 4), replace=False))
            entries.append((i + 1, int(rng.integers(200, 900)), int(rng.integers(300, 900)), labels))
        index = _index(entries)
        policy = ExclusionPolicy()
        accepted = set(filter_backgrounds(index, policy))
        indexed = {e[0] for e in entries}
        assert accepted <= indexed
        for i, w, h, labels in entries:
            ok = (
                not (labels & set(policy.excluded_labels))
                and w >= policy.min_width
                and h >= policy.min_height
            )
            assert (i in accepted) is ok

    def test_rejection_reason_mentions_labels_and_size(self):
        index = _index([(1, 300, 400, {"car"})])
        entry = index.images[0]
        reason = rejection_reason(entry, index.label_map[1], ExclusionPolicy())
        assert "car" in reason and "300x400" in reason


class TestStandardize:
    def test_exact_size_is_identity(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, (1500, 1500, 3), dtype=np.uint8)
        assert np.array_equal(standardize_background(img), img)

    def test_wide_image_center_crop_without_scaling(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, (1500, 3000, 3), dtype=np.uint8)
        out = standardize_background(img)
        assert np.array_equal(out, img[:, 750:2250])

    def test_tall_image_scales_then_crops_rows(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, (1000, 750, 3), dtype=np.uint8)
        out = standardize_background(img)
        assert out.shape == (1500, 1500, 3)
        # documented kernel: bilinear to 1500x2000, rows 250..1749 kept
        reference = cv2.resize(img, (1500, 2000), interpolation=cv2.INTER_LINEAR)
        assert np.array_equal(out, reference[250:1750])

    def test_odd_remainder_floors_leading_offset(self):
        img = np.zeros((601, 400, 3), np.uint8)
        img[:, :, 0] = np.linspace(0, 255, 400, dtype=np.uint8)[None, :]
        out = standardize_background(img, target=400)
        # scaled rows: round(601 * 400 / 400) = 601; offset (601-400)//2 = 100
        reference = cv2.resize(img, (400, 601), interpolation=cv2.INTER_LINEAR)
        assert np.array_equal(out, reference[100:500])

    def test_grayscale_promoted(self):
        img = np.full((1500, 1500), 90, np.uint8)
        out = standardize_background(img)
        assert out.shape == (1500, 1500, 3)
        assert np.all(out == 90)

    def test_reproducible(self):
        rng = np.random.default_rng(4)
        img = rng.integers(0, 256, (700, 1100, 3), dtype=np.uint8)
        assert np.array_equal(standardize_background(img), standardize_background(img))

    def test_upscaling_small_inputs_allowed(self):
        img = np.full((30, 40, 3), 55, np.uint8)
        out = standardize_background(img, target=60)
        assert out.shape == (60, 60, 3)
