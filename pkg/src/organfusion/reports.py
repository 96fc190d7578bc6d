"""Report documents with provenance metadata, and text tables laid out like
the published result tables."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Mapping, Sequence
from pathlib import Path

from .classeval import AccuracyReport, OrganClassificationReport
from .data import ORGANS, OrganClass
from .datatools import DatasetStats
from .detection import ApReport
from .fusion import FusionRule

ORGAN_TITLES = {
    OrganClass.LEAF: "Leaf",
    OrganClass.FLOWER: "Flower",
    OrganClass.FRUIT: "Fruit",
    OrganClass.STEM: "Stem",
    OrganClass.HDL: "HDL",
}
RULE_TITLES = {FusionRule.SUM: "Sum", FusionRule.PRODUCT: "Product", FusionRule.VOTING: "Voting"}


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_metadata(subcommand: str, config: Mapping, inputs: Mapping[str, str | None], seed: int | None) -> dict:
    from . import __version__
    from .kernels import BACKEND

    return {
        "tool": "organfusion",
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "config": dict(config),
        "inputs": {
            name: {"path": str(path), "sha256": file_digest(path)}
            for name, path in inputs.items()
            if path is not None
        },
        "kernel_backend": BACKEND,
    }


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_document(doc, path) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")


def render_table(headers: Sequence[str], rows: Sequence[Sequence[str]], title: str | None = None) -> str:
    cols = list(zip(headers, *rows))
    widths = [max(len(str(c)) for c in col) for col in cols]

    def line(cells):
        return "| " + " | ".join(str(c).center(w) for c, w in zip(cells, widths)) + " |"

    rule = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    out = [title] if title else []
    out += [rule, line(headers), rule.replace("-", "=")]
    out += [line(r) for r in rows]
    out.append(rule)
    return "\n".join(out)


def _int(x: float) -> str:
    return f"{x:.0f}"


def split_table(stats: DatasetStats) -> str:
    counts = stats.split_counts or {}
    return render_table(
        ["Train", "Test", "Validation"],
        [[str(counts.get("train", 0)), str(counts.get("test", 0)), str(counts.get("val", 0))]],
        "Samples per split",
    )


def box_scale_table(stats: DatasetStats) -> str:
    rows = []
    for o in ORGANS:
        s = stats.box_scale.get(o)
        if s is None:
            rows.append([ORGAN_TITLES[o], "-", "-"])
        else:
            rows.append(
                [
                    ORGAN_TITLES[o],
                    f"{_int(s.mean_width)}×{_int(s.mean_height)}",
                    f"{_int(s.std_width)}×{_int(s.std_height)}",
                ]
            )
    return render_table(["Organs", "Average", "Standard Deviation"], rows, "Bounding-box scale per organ")


def samples_table(stats: DatasetStats) -> str:
    s = stats.samples_summary
    return render_table(
        ["Mean", "Standard Deviation", "Minimum", "Maximum"],
        [[f"{s.mean:.1f}", f"{s.std:.1f}", _int(s.minimum), _int(s.maximum)]],
        "Samples per species",
    )


def organs_table(stats: DatasetStats) -> str:
    rows = [
        [ORGAN_TITLES[o], f"{s.mean:.1f}", f"{s.std:.1f}", _int(s.maximum)]
        for o, s in stats.organs_per_species.items()
    ]
    return render_table(["Organ", "Mean", "Standard Deviation", "Maximum"], rows, "Organs per species")


def stats_tables(stats: DatasetStats) -> str:
    parts = []
    if stats.split_counts is not None:
        parts.append(split_table(stats))
    parts += [box_scale_table(stats), samples_table(stats), organs_table(stats)]
    return "\n\n".join(parts) + "\n"


def ap_tables(report: ApReport) -> str:
    main = render_table(
        ["AP", "AP50", "AP75"],
        [[f"{100 * report.ap:.1f}", f"{100 * report.ap50:.1f}", f"{100 * report.ap75:.1f}"]],
        "Organ detection average precision",
    )
    organs = [o for o in ORGANS if o in report.per_organ_ap]
    per = render_table(
        [ORGAN_TITLES[o] for o in organs],
        [[f"{100 * report.per_organ_ap[o]:.1f}" for o in organs]],
        "Average precision per organ",
    )
    return main + "\n\n" + per + "\n"


def organ_accuracy_table(accuracy: Mapping[OrganClass, float]) -> str:
    organs = [o for o in ORGANS if o in accuracy]
    return render_table(
        [ORGAN_TITLES[o] for o in organs],
        [[f"{accuracy[o]:.2f}" for o in organs]],
        "Organ-based classification accuracy",
    )


def classification_tables(report: OrganClassificationReport) -> str:
    return organ_accuracy_table(report.accuracy) + "\n"


def species_id_tables(report: AccuracyReport) -> str:
    acc = report.rule_accuracy
    headers = ["Rule"] + [RULE_TITLES[r] for r in report.rules]
    row = ["Accuracy"] + [f"{acc[r]:.2f}" for r in report.rules]
    base = report.baseline_accuracy
    if base is not None:
        headers.append("Whole image")
        row.append(f"{base:.2f}")
    parts = [render_table(headers, [row], "Species identification accuracy")]
    if report.organ_counts:
        parts.append(organ_accuracy_table(report.organ_accuracy))
    parts.append(
        f"evaluated images: {report.evaluated_images}  skipped: {report.skipped_images}  "
        f"whole-image fallback: {report.fallback_images}"
    )
    return "\n\n".join(parts) + "\n"
