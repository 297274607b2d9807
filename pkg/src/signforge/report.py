"""Evaluation report serialization and figures.

The report is a JSON document carrying every metric plus the full PR
curve, a CSV mirror of the per-category recall table, and two rendered
figures (PR curve, per-category recall bars) written next to them.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .detection_eval import EvalReport


def report_to_dict(report: EvalReport) -> dict:
    return {
        "ap": report.ap,
        "map": report.map,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "chosen_threshold": report.chosen_threshold,
        "per_category_recall": {
            str(cid): {
                "hits": hits,
                "gt_count": total,
                "recall": (hits / total) if total else 0.0,
            }
            for cid, (hits, total) in sorted(report.per_category_recall.items())
        },
        "pr_curve": [[r, p] for r, p in report.pr_curve],
        "false_positives": [
            {
                "image_id": det.image_id,
                "bbox": list(det.bbox),
                "score": round(det.confidence, 6),
            }
            for det in report.false_positives
        ],
    }


def category_recall_csv(report: EvalReport) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["category_id", "hits", "gt_count", "recall"])
    for cid, (hits, total) in sorted(report.per_category_recall.items()):
        writer.writerow([cid, hits, total, f"{hits / total:.6f}" if total else "0.000000"])
    return buf.getvalue().encode("utf-8")


def plot_pr_curve(report: EvalReport, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    if report.pr_curve:
        recalls = [r for r, _ in report.pr_curve]
        precisions = [p for _, p in report.pr_curve]
        ax.plot(recalls, precisions, color="tab:blue", lw=1.2, label="raw")
        envelope = precisions[:]
        for i in range(len(envelope) - 2, -1, -1):
            envelope[i] = max(envelope[i], envelope[i + 1])
        ax.step(recalls, envelope, color="tab:orange", lw=1.2,
                where="post", label="envelope")
        ax.legend(loc="lower left")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.set_title(f"AP = {report.ap:.4f} (IoU-matched)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_category_recall(report: EvalReport, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(max(6, 0.25 * len(report.per_category_recall)), 4))
    items = sorted(report.per_category_recall.items())
    positions = range(len(items))
    totals = [total for _, (_, total) in items]
    hits = [h for _, (h, _) in items]
    ax.bar(positions, totals, color="firebrick", alpha=0.7, label="ground truth")
    ax.bar(positions, hits, color="seagreen", alpha=0.9, label="recovered")
    ax.set_xticks(list(positions))
    ax.set_xticklabels([str(cid) for cid, _ in items], rotation=90, fontsize=7)
    ax.set_xlabel("category")
    ax.set_ylabel("count")
    ax.legend(loc="upper right")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(report: EvalReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, the recall CSV, and both figures into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "report": out_dir / "report.json",
        "category_recall_csv": out_dir / "per_category_recall.csv",
        "pr_curve_png": out_dir / "pr_curve.png",
        "category_recall_png": out_dir / "category_recall.png",
    }
    paths["report"].write_bytes(
        (json.dumps(report_to_dict(report), indent=2) + "\n").encode("utf-8")
    )
    paths["category_recall_csv"].write_bytes(category_recall_csv(report))
    plot_pr_curve(report, paths["pr_curve_png"])
    plot_category_recall(report, paths["category_recall_png"])
    return paths
