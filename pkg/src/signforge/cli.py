"""Command-line pipeline: prepare -> generate -> evaluate.

One JSON config drives generation; flags override config values. Progress
goes to standard error, machine output to files and standard out. The
SIGNFORGE_LOG environment variable sets verbosity (DEBUG/INFO/WARNING).
Every stage writes a run manifest, also on failure with partial counts.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .corpus import (
    BACKGROUND_SIZE,
    DEFAULT_EXCLUDED_LABELS,
    ExclusionPolicy,
    filter_backgrounds,
    parse_coco_annotations,
    rejection_reason,
    standardize_background,
)
from .dataset_io import (
    GroundTruthBox,
    ImageRecord,
    import_gtsdb_ground_truth,
    read_annotations,
    read_image_rgb,
    read_predictions,
    write_annotations,
    write_image_png,
)
from .detection_eval import evaluate
from .errors import ConfigError, IntegrityError, SignforgeError
from .report import write_report
from .synthesizer import GenerationConfig, generate_dataset
from .template_catalog import load_catalog_file

logger = logging.getLogger("signforge")


def _setup_logging() -> None:
    level_name = os.environ.get("SIGNFORGE_LOG", "INFO").upper()
    level = getattr(logging, level_name, logging.INFO)
    logging.basicConfig(
        stream=sys.stderr,
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _write_run_manifest(
    out_dir: Path,
    run_id: str,
    *,
    config_snapshot: str | None,
    master_seed: int | None,
    counts: dict,
    wall_clock: dict[str, float],
    status: str,
) -> None:
    manifest = {
        "run_id": run_id,
        "tool_version": __version__,
        "master_seed": master_seed,
        "config_snapshot": config_snapshot,
        "counts": counts,
        "wall_clock_seconds": {k: round(v, 3) for k, v in wall_clock.items()},
        "status": status,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _standardize_one(args: tuple[str, str, str]) -> None:
    src, dst, _ = args
    raster = read_image_rgb(src)
    write_image_png(dst, standardize_background(raster))


def cmd_prepare(args: argparse.Namespace) -> int:
    images_dir = Path(args.images)
    out_dir = Path(args.out)
    counts: dict = {}
    wall: dict[str, float] = {}
    status = "failed"
    try:
        if not images_dir.is_dir():
            raise ConfigError(f"corpus directory not readable: {images_dir}")
        t0 = time.perf_counter()
        index = parse_coco_annotations(Path(args.annotations).read_bytes())
        wall["parse"] = time.perf_counter() - t0
        counts["indexed"] = len(index.images)

        excluded = (
            frozenset(args.exclude_label)
            if args.exclude_label
            else DEFAULT_EXCLUDED_LABELS
        )
        policy = ExclusionPolicy(
            excluded_labels=excluded,
            min_width=args.min_width,
            min_height=args.min_height,
        )
        t0 = time.perf_counter()
        accepted = set(filter_backgrounds(index, policy))
        wall["filter"] = time.perf_counter() - t0
        counts["accepted"] = len(accepted)
        counts["rejected"] = counts["indexed"] - counts["accepted"]
        if not accepted:
            logger.warning("no image passed the exclusion policy")

        out_dir.mkdir(parents=True, exist_ok=True)
        manifest_rows = []
        jobs = []
        for entry in index.images:
            labels = index.label_map.get(entry.image_id, set())
            reason = rejection_reason(entry, labels, policy)
            manifest_rows.append(
                [entry.image_id, entry.width, entry.height,
                 int(reason is None), reason or ""]
            )
            if reason is None:
                src = images_dir / entry.file_name
                if not src.exists():
                    raise ConfigError(f"corpus image not readable: {src}")
                jobs.append((str(src), str(out_dir / f"{entry.image_id:012d}.png"), ""))

        t0 = time.perf_counter()
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                list(pool.map(_standardize_one, jobs, chunksize=4))
        else:
            for job in jobs:
                _standardize_one(job)
        wall["standardize"] = time.perf_counter() - t0
        counts["written"] = len(jobs)

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["source_id", "original_w", "original_h", "accepted_flag", "rejection_reason"]
        )
        writer.writerows(manifest_rows)
        (out_dir / "manifest.csv").write_text(buf.getvalue())
        status = "ok"
        logger.info("prepare: %d indexed, %d accepted", counts["indexed"], counts["accepted"])
        return 0
    finally:
        _write_run_manifest(
            out_dir,
            args.run_id,
            config_snapshot=None,
            master_seed=None,
            counts=counts,
            wall_clock=wall,
            status=status,
        )


def cmd_generate(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    counts: dict = {}
    wall: dict[str, float] = {}
    status = "failed"
    snapshot: str | None = None
    seed: int | None = None
    try:
        if args.config:
            snapshot = Path(args.config).read_text()
            data = json.loads(snapshot)
            if not isinstance(data, dict):
                raise ConfigError("config document must be a JSON object")
        else:
            data = {}
        if args.n is not None:
            data["n_samples"] = args.n
        if args.seed is not None:
            data["master_seed"] = args.seed
        config = GenerationConfig.from_dict(data)
        seed = config.master_seed

        backgrounds = sorted(
            p for p in Path(args.backgrounds).iterdir()
            if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        catalog = load_catalog_file(args.templates)

        t0 = time.perf_counter()
        result = generate_dataset(
            config,
            backgrounds,
            catalog,
            out_dir,
            run_id=args.run_id,
            workers=args.workers,
        )
        wall["generate"] = time.perf_counter() - t0
        counts.update(result)
        status = "ok" if result["failed"] == 0 else "partial"
        logger.info(
            "generate: %d/%d samples, %d annotations",
            result["generated"], result["requested"], result["annotations"],
        )
        return 0 if result["failed"] == 0 else 1
    finally:
        _write_run_manifest(
            out_dir,
            args.run_id,
            config_snapshot=snapshot,
            master_seed=seed,
            counts=counts,
            wall_clock=wall,
            status=status,
        )


def cmd_evaluate(args: argparse.Namespace) -> int:
    _, gt_boxes, _ = read_annotations(Path(args.ground_truth).read_bytes())
    detections = read_predictions(Path(args.predictions).read_bytes())

    gt_ids = {str(b.image_id) for b in gt_boxes}
    unknown = sorted({str(d.image_id) for d in detections} - gt_ids)
    if unknown:
        raise IntegrityError(
            f"predictions reference image ids absent from ground truth: {unknown[:10]}"
        )

    selection_dets = selection_gts = None
    if args.select_threshold_on:
        val_pred_path, val_gt_path = args.select_threshold_on
        selection_dets = read_predictions(Path(val_pred_path).read_bytes())
        _, selection_gts, _ = read_annotations(Path(val_gt_path).read_bytes())

    report = evaluate(
        detections,
        gt_boxes,
        iou_thresh=args.iou,
        threshold=args.threshold,
        selection_detections=selection_dets,
        selection_ground_truths=selection_gts,
    )
    paths = write_report(report, args.out)
    summary = {
        "ap": report.ap,
        "map": report.map,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "chosen_threshold": report.chosen_threshold,
        "report": str(paths["report"]),
    }
    print(json.dumps(summary))
    logger.info("evaluate: mAP=%.4f F1=%.4f", report.map, report.f1)
    return 0


def cmd_import_gtsdb_gt(args: argparse.Namespace) -> int:
    boxes = import_gtsdb_ground_truth(Path(args.gt).read_bytes())
    try:
        width, height = (int(v) for v in args.image_size.lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"--image-size must look like 1360x800, got {args.image_size!r}") from exc

    seen: dict[int | str, ImageRecord] = {}
    for box in boxes:
        if box.image_id not in seen:
            name = box.image_id if isinstance(box.image_id, str) else f"{box.image_id:05d}.ppm"
            seen[box.image_id] = ImageRecord(box.image_id, str(name), width, height)
    images = [seen[k] for k in sorted(seen, key=str)]
    categories = {cid: f"class_{cid}" for cid in sorted({b.category_id for b in boxes})}
    json_bytes, csv_bytes = write_annotations(images, boxes, categories)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(json_bytes)
    out.with_suffix(".csv").write_bytes(csv_bytes)
    logger.info("imported %d boxes over %d images", len(boxes), len(images))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signforge",
        description="Synthetic traffic-sign training data and detector evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"signforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter and standardize a background corpus")
    p.add_argument("--images", required=True, help="directory with corpus image files")
    p.add_argument("--annotations", required=True, help="COCO-format annotation JSON")
    p.add_argument("--out", required=True, help="output directory for backgrounds")
    p.add_argument("--min-width", type=int, default=400)
    p.add_argument("--min-height", type=int, default=600)
    p.add_argument("--exclude-label", action="append", default=None,
                   help="category name to exclude (repeatable; default: traffic set)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--run-id", default="prepare")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("generate", help="synthesize an annotated dataset")
    p.add_argument("--config", required=True, help="generation config JSON")
    p.add_argument("--backgrounds", required=True, help="directory of standardized backgrounds")
    p.add_argument("--templates", required=True, help="template manifest CSV")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--n", type=int, default=None, help="overrides n_samples")
    p.add_argument("--seed", type=int, default=None, help="overrides master_seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--run-id", default="synth")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--predictions", required=True, help="COCO-results JSON or CSV")
    p.add_argument("--ground-truth", required=True, help="COCO-format annotation JSON")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--iou", type=float, default=0.7)
    p.add_argument("--threshold", type=float, default=None,
                   help="fixed confidence threshold for P/R/F1")
    p.add_argument("--select-threshold-on", nargs=2, default=None,
                   metavar=("VAL_PREDICTIONS", "VAL_GROUND_TRUTH"),
                   help="pick the max-F1 threshold on this validation pair")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("import-gtsdb-gt", help="convert semicolon gt.txt to annotation JSON")
    p.add_argument("--gt", required=True, help="gt.txt (file;x1;y1;x2;y2;class)")
    p.add_argument("--out", required=True, help="output annotation JSON path")
    p.add_argument("--image-size", default="1360x800", help="corpus image size WxH")
    p.set_defaults(func=cmd_import_gtsdb_gt)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SignforgeError as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
