"""Report bundle: markdown summary, CSV tables, and rendered figures.

``write_report`` takes any subset of an evaluation report, a comparison
report, and a run record (as dataclasses or their dict forms, so saved
JSON files can be re-rendered) and writes a self-contained bundle:

* ``report.md`` and ``report.json`` summarising everything provided;
* ``comparison.csv`` and ``eval_classes.csv`` for spreadsheet use;
* ``figures/*.png`` bar charts rendered with the Agg backend.

The bundle contains no timestamps, so regenerating it from the same
inputs reproduces the same files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import DomainError


def _as_dict(obj) -> dict | None:
    if obj is None:
        return None
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return dict(obj)


def _fmt(value, digits: int = 4) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def _md_table(headers: list[str], rows: list[list[str]]) -> str:
    lines = [
        "| " + " | ".join(headers) + " |",
        "| " + " | ".join("---" for _ in headers) + " |",
    ]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    return "\n".join(lines)


def _comparison_rows(comparison: dict) -> list[dict]:
    return [comparison["arms"][name] for name in sorted(comparison["arms"])]


def _write_comparison_csv(comparison: dict, path: Path) -> None:
    fields = ["name", "mode", "complete", "tp", "fp", "fn", "precision", "recall", "f1", "error"]
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for row in _comparison_rows(comparison):
            writer.writerow({k: row.get(k) for k in fields})


def _write_eval_csv(eval_report: dict, path: Path) -> None:
    fields = [
        "class_label",
        "n_ground_truth",
        "ap50",
        "ap",
        "ar100",
        "tp",
        "fp",
        "fn",
        "precision",
        "recall",
        "f1",
    ]
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for label in sorted(eval_report["classes"]):
            row = eval_report["classes"][label]
            writer.writerow({k: row.get(k) for k in fields})


def _bar_figure(path: Path, title: str, labels: list[str], series: dict[str, list[float]], ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(series), 1)
    for i, (name, values) in enumerate(series.items()):
        positions = [x + i * width for x in range(len(labels))]
        ax.bar(positions, values, width=width, label=name)
    ax.set_xticks([x + width * (len(series) - 1) / 2 for x in range(len(labels))])
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _comparison_figures(comparison: dict, figures_dir: Path) -> list[Path]:
    rows = [r for r in _comparison_rows(comparison) if r.get("complete")]
    if not rows:
        return []
    labels = [r["name"] for r in rows]
    paths = []
    quality = figures_dir / "comparison_quality.png"
    _bar_figure(
        quality,
        "Precision / recall / F1 by arm",
        labels,
        {
            "precision": [r["precision"] for r in rows],
            "recall": [r["recall"] for r in rows],
            "f1": [r["f1"] for r in rows],
        },
        ylabel="fraction",
    )
    paths.append(quality)
    counts = figures_dir / "comparison_counts.png"
    _bar_figure(
        counts,
        "TP / FP / FN by arm",
        labels,
        {
            "tp": [r["tp"] for r in rows],
            "fp": [r["fp"] for r in rows],
            "fn": [r["fn"] for r in rows],
        },
        ylabel="count",
    )
    paths.append(counts)
    return paths


def _eval_figures(eval_report: dict, figures_dir: Path) -> list[Path]:
    classes = sorted(eval_report["classes"])
    if not classes:
        return []
    rows = [eval_report["classes"][c] for c in classes]
    path = figures_dir / "eval_ap_by_class.png"
    _bar_figure(
        path,
        "AP by class",
        classes,
        {
            "AP50": [r["ap50"] if r["ap50"] is not None else 0.0 for r in rows],
            "AP": [r["ap"] if r["ap"] is not None else 0.0 for r in rows],
        },
        ylabel="average precision",
    )
    return [path]


def _markdown(
    eval_report: dict | None, comparison: dict | None, run_record: dict | None
) -> str:
    sections = ["# Detection report", ""]
    if run_record is not None:
        sections.append("## Run")
        sections.append("")
        sections.append(
            _md_table(
                ["field", "value"],
                [
                    ["config hash", str(run_record.get("config_hash", "n/a"))],
                    ["zoom", _fmt(run_record.get("zoom"))],
                    ["tiles", _fmt(run_record.get("n_tiles"))],
                    [
                        "mosaic",
                        f"{run_record.get('mosaic_width')} x {run_record.get('mosaic_height')}",
                    ],
                    ["crops", _fmt(run_record.get("n_crops"))],
                    ["failed crops", _fmt(run_record.get("n_failed"))],
                    ["raw detections", _fmt(run_record.get("n_detections_raw"))],
                    ["final detections", _fmt(run_record.get("n_detections_final"))],
                ],
            )
        )
        sections.append("")
    if eval_report is not None:
        sections.append("## Evaluation")
        sections.append("")
        sections.append(
            _md_table(
                ["metric", "value"],
                [
                    ["mAP@0.5", _fmt(eval_report.get("mean_ap50"))],
                    ["mAP@[0.5:0.95]", _fmt(eval_report.get("mean_ap"))],
                    ["mAR@100", _fmt(eval_report.get("mean_ar100"))],
                    ["mAP small", _fmt(eval_report.get("mean_ap_small"))],
                    ["mAP medium", _fmt(eval_report.get("mean_ap_medium"))],
                    ["mAP large", _fmt(eval_report.get("mean_ap_large"))],
                    ["TP / FP / FN", f"{eval_report.get('tp')} / {eval_report.get('fp')} / {eval_report.get('fn')}"],
                    ["precision", _fmt(eval_report.get("precision"))],
                    ["recall", _fmt(eval_report.get("recall"))],
                    ["F1", _fmt(eval_report.get("f1"))],
                ],
            )
        )
        sections.append("")
        headers = ["class", "GT", "AP50", "AP", "AR100", "TP", "FP", "FN", "P", "R", "F1"]
        rows = []
        for label in sorted(eval_report["classes"]):
            r = eval_report["classes"][label]
            rows.append(
                [
                    label,
                    _fmt(r.get("n_ground_truth")),
                    _fmt(r.get("ap50")),
                    _fmt(r.get("ap")),
                    _fmt(r.get("ar100")),
                    _fmt(r.get("tp")),
                    _fmt(r.get("fp")),
                    _fmt(r.get("fn")),
                    _fmt(r.get("precision")),
                    _fmt(r.get("recall")),
                    _fmt(r.get("f1")),
                ]
            )
        sections.append(_md_table(headers, rows))
        sections.append("")
    if comparison is not None:
        sections.append("## Comparison")
        sections.append("")
        headers = ["arm", "mode", "TP", "FP", "FN", "P", "R", "F1"]
        rows = []
        for arm in _comparison_rows(comparison):
            if not arm.get("complete"):
                rows.append(
                    [arm["name"], arm["mode"], "-", "-", "-", "-", "-",
                     f"incomplete: {arm.get('error')}"]
                )
                continue
            rows.append(
                [
                    arm["name"],
                    arm["mode"],
                    _fmt(arm["tp"]),
                    _fmt(arm["fp"]),
                    _fmt(arm["fn"]),
                    _fmt(arm["precision"]),
                    _fmt(arm["recall"]),
                    _fmt(arm["f1"]),
                ]
            )
        sections.append(_md_table(headers, rows))
        sections.append("")
        deltas = comparison.get("f1_deltas_pp", {})
        if deltas:
            sections.append(
                _md_table(
                    ["pair", "delta F1 (pp)"],
                    [[pair, f"{deltas[pair]:+.2f}"] for pair in sorted(deltas)],
                )
            )
            sections.append("")
    return "\n".join(sections)


def write_report(
    out_dir: str | Path,
    eval_report=None,
    comparison=None,
    run_record=None,
) -> list[Path]:
    """Write the full report bundle; returns the paths written."""
    eval_dict = _as_dict(eval_report)
    comparison_dict = _as_dict(comparison)
    record_dict = (
        run_record.to_dict() if hasattr(run_record, "to_dict") else run_record
    )
    if eval_dict is None and comparison_dict is None and record_dict is None:
        raise DomainError("nothing to report: provide eval, comparison or run record")
    out_dir = Path(out_dir)
    figures_dir = out_dir / "figures"
    figures_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    report_json = out_dir / "report.json"
    report_json.write_text(
        json.dumps(
            {
                "eval": eval_dict,
                "comparison": comparison_dict,
                "run_record": record_dict,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    written.append(report_json)

    report_md = out_dir / "report.md"
    report_md.write_text(_markdown(eval_dict, comparison_dict, record_dict))
    written.append(report_md)

    if comparison_dict is not None:
        comparison_csv = out_dir / "comparison.csv"
        _write_comparison_csv(comparison_dict, comparison_csv)
        written.append(comparison_csv)
        written.extend(_comparison_figures(comparison_dict, figures_dir))
    if eval_dict is not None:
        eval_csv = out_dir / "eval_classes.csv"
        _write_eval_csv(eval_dict, eval_csv)
        written.append(eval_csv)
        written.extend(_eval_figures(eval_dict, figures_dir))
    return written
