"""Command-line entry point.

Every subcommand reads the documented file formats, writes a JSON document
carrying a ``metadata`` block (input digests, seed, version, configuration)
and prints either that document or text tables (``--format``). Reports hold
no timestamps, so reruns with the same arguments are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from decimal import Decimal, InvalidOperation
from pathlib import Path

from . import __version__, reports
from .classeval import FallbackPolicy, evaluate_organ_classifiers, evaluate_species_id, fuse_images, select_images
from .data import (
    OrganClass,
    detections_to_list,
    load_detections,
    load_manifest,
    load_roi_predictions,
    load_splits,
    load_whole_image_predictions,
    manifest_to_dict,
    roi_to_dict,
)
from .datatools import SHUFFLE_ALGORITHM, SplitSpec, compute_stats, down_select, split_dataset
from .detection import DEFAULT_NMS_THRESHOLD, IOU_THRESHOLDS, EvalConfig, evaluate_detections, nms
from .errors import ConfigError, InputFileError, OrganFusionError
from .fusion import FUSION_RULES, UNIFORM_PRIOR, FusionRule, OrganPrior
from .synth import (
    REPORTED_ORGAN_ACCURACY,
    REPORTED_ROIS_PER_IMAGE,
    LongTailProfile,
    SimulatorConfig,
    generate,
    whole_image_predictions,
)

EVAL_SPLITS = ("train", "val", "test", "all")


# ---------------------------------------------------------------------------
# argument types


def parse_thresholds(text: str) -> tuple[float, ...]:
    """``start:step:stop`` (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            start, step, stop = (Decimal(p) for p in text.split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            values = []
            v = start
            while v <= stop:
                values.append(float(v))
                v += step
        else:
            values = [float(Decimal(p)) for p in text.split(",") if p.strip()]
    except (InvalidOperation, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"bad IoU thresholds {text!r}: {exc}") from exc
    if not values or any(not 0 < v <= 1 for v in values):
        raise argparse.ArgumentTypeError(f"IoU thresholds must lie in (0, 1]: {text!r}")
    return tuple(values)


def unit_interval(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is outside [0, 1]")
    return v


def organ_values(text: str) -> dict[OrganClass, float]:
    """``leaf=0.68,flower=0.75`` style organ mapping."""
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        try:
            key, value = part.split("=")
            out[OrganClass.parse(key)] = float(value)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad organ mapping {part!r}: expected organ=value") from exc
    return out


def profile_arg(text: str) -> LongTailProfile:
    try:
        parts = text.split(",")
        mean, std, lo, hi = float(parts[0]), float(parts[1]), int(parts[2]), int(parts[3])
        total = int(parts[4]) if len(parts) > 4 else None
    except (ValueError, IndexError) as exc:
        raise argparse.ArgumentTypeError("profile is mean,std,min,max[,total]") from exc
    return LongTailProfile(mean, std, lo, hi, total)


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return v


def seed_arg(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


# ---------------------------------------------------------------------------
# helpers


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise InputFileError(f"no such file: {p}")


def _rules(value: str) -> tuple[FusionRule, ...]:
    return FUSION_RULES if value == "all" else (FusionRule(value),)


def _prior(path) -> OrganPrior:
    return UNIFORM_PRIOR if path is None else OrganPrior.load(path)


def _manifest_with_splits(args):
    manifest = load_manifest(args.manifest)
    if getattr(args, "splits", None):
        manifest = manifest.with_splits(load_splits(args.splits, manifest))
    return manifest


def _emit(args, doc: dict, table: str | None) -> None:
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        reports.write_document(doc, args.output)
    if args.format == "table" and table is not None:
        sys.stdout.write(table)
    elif args.format == "doc" or table is None:
        sys.stdout.write(reports.dumps(doc))


def _eval_split(value: str) -> str | None:
    return None if value == "all" else value


# ---------------------------------------------------------------------------
# subcommands


def cmd_stats(args) -> int:
    _require_files(args.manifest, args.splits)
    manifest = _manifest_with_splits(args)
    stats = compute_stats(manifest)
    doc = {
        "metadata": reports.run_metadata(
            "stats", {"std": "population"}, {"manifest": args.manifest, "splits": args.splits}, args.seed
        ),
        "stats": stats.to_dict(),
    }
    _emit(args, doc, reports.stats_tables(stats))
    return 0


def cmd_split(args) -> int:
    _require_files(args.manifest)
    spec = SplitSpec(args.train, args.val, args.test, args.min_one_threshold, args.seed)
    manifest = load_manifest(args.manifest)
    assignment = split_dataset(manifest, spec, workers=args.workers)
    stats = compute_stats(manifest.with_splits(assignment))
    config = {
        "fractions": {"train": spec.train, "val": spec.val, "test": spec.test},
        "min_one_rule_threshold": spec.min_one_rule_threshold,
        "shuffle": SHUFFLE_ALGORITHM,
    }
    doc = {
        "metadata": reports.run_metadata("split", config, {"manifest": args.manifest}, args.seed),
        "split_counts": stats.split_counts,
        "assignments": assignment,
    }
    _emit(args, doc, reports.split_table(stats) + "\n")
    return 0


def cmd_down_select(args) -> int:
    _require_files(args.manifest)
    manifest = load_manifest(args.manifest)
    reduced = down_select(manifest, args.min_leaf_rois, args.require_all_organs)
    config = {"min_leaf_rois": args.min_leaf_rois, "require_all_organs": args.require_all_organs}
    doc = {"metadata": reports.run_metadata("down-select", config, {"manifest": args.manifest}, args.seed)}
    doc.update(manifest_to_dict(reduced))
    summary = (
        f"kept {reduced.species_count} of {manifest.species_count} species, "
        f"{len(reduced.images)} of {len(manifest.images)} images\n"
    )
    _emit(args, doc, summary)
    return 0


def cmd_nms(args) -> int:
    _require_files(args.detections, args.manifest)
    manifest = load_manifest(args.manifest) if args.manifest else None
    dets = load_detections(args.detections, manifest)
    kept = nms(dets, args.nms_threshold)
    doc = {
        "metadata": reports.run_metadata(
            "nms",
            {"nms_threshold": args.nms_threshold, "class_aware": True},
            {"detections": args.detections, "manifest": args.manifest},
            args.seed,
        ),
        "detections": detections_to_list(kept),
    }
    _emit(args, doc, f"kept {len(kept)} of {len(dets)} detections\n")
    return 0


def cmd_eval_det(args) -> int:
    _require_files(args.manifest, args.detections)
    manifest = load_manifest(args.manifest)
    dets = load_detections(args.detections, manifest)
    if args.apply_nms:
        dets = nms(dets, args.nms_threshold)
    config = EvalConfig(args.iou_thresholds, args.max_dets, args.workers)
    report = evaluate_detections(manifest, dets, config)
    run_config = {
        "iou_thresholds": list(args.iou_thresholds),
        "max_detections": args.max_dets,
        "apply_nms": args.apply_nms,
        "nms_threshold": args.nms_threshold if args.apply_nms else None,
        "matching": "coco-greedy",
        "interpolation": "101-point",
    }
    doc = {
        "metadata": reports.run_metadata(
            "eval-det", run_config, {"manifest": args.manifest, "detections": args.detections}, args.seed
        ),
        "report": report.to_dict(),
    }
    _emit(args, doc, reports.ap_tables(report))
    return 0


def cmd_fuse(args) -> int:
    _require_files(args.rois, args.manifest, args.prior)
    manifest = load_manifest(args.manifest) if args.manifest else None
    rois = load_roi_predictions(args.rois, manifest)
    rules = _rules(args.rule)
    prior = _prior(args.prior)
    groups: dict = {}
    for r in rois:
        groups.setdefault(r.image_id, []).append(r)
    for members in groups.values():
        members.sort(key=lambda r: r.roi_index)
    fused = fuse_images(groups, rules, prior, args.workers)
    records = [p.to_dict() for preds in fused.values() for p in preds]
    if args.records:
        Path(args.records).parent.mkdir(parents=True, exist_ok=True)
        with open(args.records, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    doc = {
        "metadata": reports.run_metadata(
            "fuse",
            {"rules": [r.value for r in rules], "prior": prior.to_dict()},
            {"rois": args.rois, "manifest": args.manifest, "prior": args.prior},
            args.seed,
        ),
        "images": len(fused),
        "records_file": args.records,
    }
    if not args.records:
        doc["records"] = records
    _emit(args, doc, f"fused {len(fused)} images under {', '.join(r.value for r in rules)}\n")
    return 0


def cmd_eval_cls(args) -> int:
    _require_files(args.manifest, args.rois, args.splits)
    manifest = _manifest_with_splits(args)
    rois = load_roi_predictions(args.rois, manifest)
    selected = set(select_images(manifest, _eval_split(args.eval_split)))
    rois = [r for r in rois if r.image_id in selected]
    report = evaluate_organ_classifiers(manifest, rois)
    doc = {
        "metadata": reports.run_metadata(
            "eval-cls",
            {"eval_split": args.eval_split},
            {"manifest": args.manifest, "rois": args.rois, "splits": args.splits},
            args.seed,
        ),
        "report": report.to_dict(),
    }
    _emit(args, doc, reports.classification_tables(report))
    return 0


def cmd_eval_species(args) -> int:
    _require_files(args.manifest, args.rois, args.splits, args.prior, args.whole_image)
    manifest = _manifest_with_splits(args)
    rois = load_roi_predictions(args.rois, manifest)
    whole = load_whole_image_predictions(args.whole_image, manifest) if args.whole_image else None
    rules = _rules(args.rule)
    prior = _prior(args.prior)
    report = evaluate_species_id(
        manifest,
        rois,
        rules,
        prior,
        FallbackPolicy(args.fallback),
        whole,
        _eval_split(args.eval_split),
        args.workers,
    )
    doc = {
        "metadata": reports.run_metadata(
            "eval-species",
            {
                "rules": [r.value for r in rules],
                "prior": prior.to_dict(),
                "fallback": args.fallback,
                "eval_split": args.eval_split,
            },
            {
                "manifest": args.manifest,
                "rois": args.rois,
                "splits": args.splits,
                "prior": args.prior,
                "whole_image": args.whole_image,
            },
            args.seed,
        ),
        "report": report.to_dict(),
    }
    _emit(args, doc, reports.species_id_tables(report))
    return 0


def cmd_simulate(args) -> int:
    accuracy = dict(REPORTED_ORGAN_ACCURACY)
    accuracy.update(args.accuracy or {})
    means = dict(REPORTED_ROIS_PER_IMAGE)
    means.update(args.mean_rois or {})
    config = SimulatorConfig(
        species_count=args.species,
        images_per_species=None if args.profile else args.images_per_species,
        profile=args.profile,
        organ_accuracy=accuracy,
        organ_mean_rois=means,
        max_rois_per_organ=args.max_rois_per_organ,
        peak_range=(args.peak_low, args.peak_high),
        true_share=args.true_share,
        spread=args.spread,
        seed=args.seed,
    )
    corpus = generate(config, workers=args.workers)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metadata = reports.run_metadata("simulate", config.to_dict(), {}, args.seed)
    manifest_doc = {"metadata": metadata}
    manifest_doc.update(manifest_to_dict(corpus.manifest))
    reports.write_document(manifest_doc, out_dir / "manifest.json")
    with open(out_dir / "rois.jsonl", "w", encoding="utf-8") as fh:
        for r in corpus.rois:
            fh.write(json.dumps(roi_to_dict(r)) + "\n")
    files = {"manifest": "manifest.json", "rois": "rois.jsonl"}
    if args.whole_image_accuracy is not None:
        with open(out_dir / "whole_image.jsonl", "w", encoding="utf-8") as fh:
            for image_id, dist in whole_image_predictions(corpus.manifest, args.whole_image_accuracy, config).items():
                fh.write(json.dumps({"image_id": image_id, "probs": dist.probabilities.tolist()}) + "\n")
        files["whole_image"] = "whole_image.jsonl"
    doc = {
        "metadata": metadata,
        "files": files,
        "images": len(corpus.manifest.images),
        "rois": len(corpus.rois),
        "roi_counts": {o.value: n for o, n in corpus.roi_counts.items()},
        "realized_accuracy": {o.value: v for o, v in corpus.realized_accuracy.items()},
    }
    if args.output is None:
        args.output = str(out_dir / "simulation.json")
    _emit(args, doc, reports.organ_accuracy_table({o: 100 * v for o, v in corpus.realized_accuracy.items()}) + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="organfusion",
        description="Organ-detection evaluation, ROI fusion and long-tail dataset tools.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=seed_arg, default=0, help="random seed (default: 0)")
    common.add_argument("--workers", type=positive_int, default=1, help="worker processes (default: 1)")
    common.add_argument("--format", choices=["doc", "table"], default="table", help="stdout format (default: table)")
    common.add_argument("--output", "-o", default=None, help="write the JSON report here")

    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("stats", parents=[common], help="dataset statistics tables")
    p.add_argument("--manifest", required=True)
    p.add_argument("--splits", default=None, help="split-assignment file overriding the manifest's")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("split", parents=[common], help="per-species train/val/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--train", type=unit_interval, default=0.70)
    p.add_argument("--val", type=unit_interval, default=0.10)
    p.add_argument("--test", type=unit_interval, default=0.20)
    p.add_argument("--min-one-threshold", type=int, default=10,
                   help="species with fewer images get at least one val and one test image (default: 10)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("down-select", parents=[common], help="restrict to species with enough organ data")
    p.add_argument("--manifest", required=True)
    p.add_argument("--min-leaf-rois", type=int, default=130)
    p.add_argument("--require-all-organs", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_down_select)

    p = sub.add_parser("nms", parents=[common], help="class-aware non-maximum suppression")
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", default=None, help="validate boxes against image bounds")
    p.add_argument("--nms-threshold", type=unit_interval, default=DEFAULT_NMS_THRESHOLD)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("eval-det", parents=[common], help="COCO-style AP of organ detections")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--iou-thresholds", type=parse_thresholds, default=IOU_THRESHOLDS,
                   help="start:step:stop or comma list (default: 0.50:0.05:0.95)")
    p.add_argument("--max-dets", type=positive_int, default=None, help="cap detections per image and class")
    p.add_argument("--apply-nms", action="store_true", help="run NMS before evaluating")
    p.add_argument("--nms-threshold", type=unit_interval, default=DEFAULT_NMS_THRESHOLD)
    p.set_defaults(func=cmd_eval_det)

    rule_help = "fusion rule (default: all)"
    p = sub.add_parser("fuse", parents=[common], help="fuse per-ROI distributions per image")
    p.add_argument("--rois", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--rule", choices=["sum", "product", "voting", "all"], default="all", help=rule_help)
    p.add_argument("--prior", default=None, help="JSON organ prior, e.g. {\"leaf\": 0.4, ...}")
    p.add_argument("--records", default=None, help="write fused records as JSON lines here")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval-cls", parents=[common], help="per-organ classifier accuracy and confusion")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rois", required=True)
    p.add_argument("--splits", default=None)
    p.add_argument("--eval-split", choices=EVAL_SPLITS, default="test")
    p.set_defaults(func=cmd_eval_cls)

    p = sub.add_parser("eval-species", parents=[common], help="per-image fused species accuracy")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rois", required=True)
    p.add_argument("--splits", default=None)
    p.add_argument("--eval-split", choices=EVAL_SPLITS, default="test")
    p.add_argument("--rule", choices=["sum", "product", "voting", "all"], default="all", help=rule_help)
    p.add_argument("--prior", default=None)
    p.add_argument("--fallback", choices=[f.value for f in FallbackPolicy], default="skip")
    p.add_argument("--whole-image", default=None, help="whole-image predictions (JSON lines)")
    p.set_defaults(func=cmd_eval_species)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic ROI-prediction corpus")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--species", type=int, default=161)
    p.add_argument("--images-per-species", type=positive_int, default=10)
    p.add_argument("--profile", type=profile_arg, default=None,
                   help="long-tail image counts as mean,std,min,max[,total]")
    p.add_argument("--accuracy", type=organ_values, default=None, help="organ=accuracy overrides")
    p.add_argument("--mean-rois", type=organ_values, default=None, help="organ=mean ROI count per image overrides")
    p.add_argument("--max-rois-per-organ", type=positive_int, default=8)
    p.add_argument("--peak-low", type=float, default=0.55)
    p.add_argument("--peak-high", type=float, default=0.95)
    p.add_argument("--true-share", type=float, default=0.25)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--whole-image-accuracy", type=unit_interval, default=None,
                   help="also write whole-image predictions with this accuracy")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OrganFusionError as exc:
        print(f"organfusion {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"organfusion {args.command}: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
