"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
from fractions import Fraction

import numpy as np
import pytest

from organfusion.classeval import evaluate_organ_classifiers, evaluate_species_id
from organfusion.cli import main
from organfusion.data import (
    ORGANS,
    DatasetManifest,
    Detection,
    GroundTruthAnnotation,
    ImageRecord,
    RoiPrediction,
    SpeciesDistribution,
    write_manifest,
)
from organfusion.datatools import SplitSpec, compute_stats, down_select, split_dataset
from organfusion.detection import IOU_THRESHOLDS, EvalConfig, evaluate_detections, nms
from organfusion.fusion import FusionRule, fuse, fuse_product, fuse_sum, fuse_vote
from organfusion.geometry import iou
from organfusion.reports import samples_table, split_table
from organfusion.synth import LongTailProfile, SimulatorConfig, generate, long_tail_counts

from conftest import FLOWER, LEAF, box, det, gt, manifest, random_boxes
from oracles import ref_evaluate

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(request, capsys):
    """Print one PASS/FAIL line for the criterion, then fail on a miss."""

    def record(ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {request.node.name}: {detail}")
        assert ok, detail

    return record


def _roi(probs, organ=LEAF, index=0, image_id="img"):
    return RoiPrediction(image_id, index, organ, box(0, 0, 10, 10), SpeciesDistribution.trusted(np.asarray(probs)))


def test_ap_matches_bruteforce_oracle(verdict):
    rng = np.random.default_rng(2024)
    organs = list(ORGANS)
    worst = 0.0
    cases = 0
    while cases < 500:
        n_cls = int(rng.integers(2, 4))
        classes = [organs[i] for i in rng.choice(5, n_cls, replace=False)]
        images = [f"im{k}" for k in range(int(rng.integers(1, 6)))]
        gts, dets = [], []
        for image in images:
            for b in random_boxes(rng, int(rng.integers(0, 5)), size=40.0):
                gts.append((image, classes[int(rng.integers(n_cls))], b))
            for b in random_boxes(rng, int(rng.integers(0, 5)), size=40.0):
                conf = float(rng.choice([0.2, 0.5, 0.9, rng.uniform()]))
                dets.append((image, classes[int(rng.integers(n_cls))], b, conf))
        if not gts:
            continue
        cases += 1
        m = DatasetManifest(
            ("s",),
            tuple(ImageRecord(i, 40, 40, 0) for i in images),
            tuple(GroundTruthAnnotation(i, o, b) for i, o, b in gts),
        )
        report = evaluate_detections(m, [Detection(i, o, b, c) for i, o, b, c in dets])
        ap, ap50, ap75, per_organ = ref_evaluate(
            [(i, o, b.as_tuple()) for i, o, b in gts],
            [(i, o, b.as_tuple(), c) for i, o, b, c in dets],
            IOU_THRESHOLDS,
        )
        assert set(per_organ) == set(report.per_organ_ap)
        diffs = [abs(report.ap - ap), abs(report.ap50 - ap50), abs(report.ap75 - ap75)]
        diffs += [abs(report.per_organ_ap[o] - v) for o, v in per_organ.items()]
        worst = max(worst, *diffs)
    verdict(worst <= 1e-9, f"{cases} instances, max |diff| = {worst:.3g} (tol 1e-9)")


def test_hand_ap_fixtures(verdict):
    single = evaluate_detections(manifest([("img", 0)], [gt(0, 0, 10, 10)]), [det(0, 0, 10, 10, 0.9)])
    fp_then_tp = evaluate_detections(
        manifest([("img", 0)], [gt(0, 0, 10, 10)]),
        [det(50, 50, 60, 60, 0.9), det(0, 0, 10, 10, 0.8)],
        EvalConfig(iou_thresholds=(0.5,)),
    )
    sweep = evaluate_detections(manifest([("img", 0)], [gt(0, 0, 10, 10)]), [det(0, 0, 6, 10, 0.7)])
    got = (single.ap, fp_then_tp.ap, sweep.ap)
    ok = got[0] == 1.0 and got[1] == 0.5 and got[2] == 0.3
    verdict(ok, f"single-TP {got[0]!r}, FP-then-TP {got[1]!r}, IoU-0.6 sweep {got[2]!r} (want 1.0, 0.5, 0.3)")


def _nms_violations(dets, thr):
    problems = []
    kept = nms(dets, thr)
    ids = {id(d) for d in dets}
    if any(id(d) not in ids for d in kept):
        problems.append("not a subset")
    if [id(d) for d in nms(kept, thr)] != [id(d) for d in kept]:
        problems.append("not idempotent")
    groups = {}
    for d in dets:
        groups.setdefault((d.image_id, d.organ), []).append(d)
    kept_ids = {id(d) for d in kept}
    for key, members in groups.items():
        top = max(d.confidence for d in members)
        if not any(id(d) in kept_ids and d.confidence == top for d in members):
            problems.append(f"{key} lost its top detection")
        k = [d for d in members if id(d) in kept_ids]
        for i in range(len(k)):
            for j in range(i + 1, len(k)):
                if iou(k[i].box, k[j].box) > thr:
                    problems.append(f"{key} kept pair above threshold")
        # class awareness: the group's result is independent of other classes
        if [id(d) for d in nms(members, thr)] != [id(d) for d in kept if (d.image_id, d.organ) == key]:
            problems.append(f"{key} depends on other classes")
        # every suppressed box overlaps a kept box of at least its confidence
        for d in members:
            if id(d) not in kept_ids and not any(iou(d.box, e.box) > thr and e.confidence >= d.confidence for e in k):
                problems.append(f"{key} suppressed without cause")
    return problems


def test_nms_properties(verdict):
    rng = np.random.default_rng(99)
    failures = []
    runs = 0
    for thr in (0.1, 0.5):
        for _ in range(1000):
            dets = []
            for b in random_boxes(rng, int(rng.integers(1, 12)), size=60.0):
                dets.append(
                    Detection(
                        f"im{int(rng.integers(2))}",
                        (LEAF, FLOWER)[int(rng.integers(2))],
                        b,
                        float(rng.choice([0.5, rng.uniform()])),
                    )
                )
            failures += _nms_violations(dets, thr)
            runs += 1
    verdict(not failures, f"{runs} randomized inputs at thresholds 0.1 and 0.5, {len(failures)} violations")


def test_fusion_properties(verdict):
    rng = np.random.default_rng(7)
    counts = dict(validity=0, permutation=0, collapse=0, scaling=0, exact_mean=0)
    failures = []
    for case in range(1000):
        n_species = int(rng.integers(2, 8))
        n = int(rng.integers(1, 7))
        probs = rng.dirichlet(np.full(n_species, 0.7), size=n)
        organs = [ORGANS[int(k)] for k in rng.integers(0, 5, n)]
        rois = [_roi(p, o, i) for i, (p, o) in enumerate(zip(probs, organs))]
        perm = [rois[i] for i in rng.permutation(n)]
        for rule in FusionRule:
            out = fuse(rois, rule).probabilities
            if not (np.all(out >= 0) and abs(math.fsum(out.tolist()) - 1.0) <= 1e-12):
                failures.append(f"case {case} {rule.value}: invalid distribution")
            if fuse(perm, rule).probabilities.tobytes() != out.tobytes():
                failures.append(f"case {case} {rule.value}: order dependent")
        counts["validity"] += 1
        counts["permutation"] += 1

        one = rois[:1]
        top = int(np.argmax(probs[0]))
        if {fuse(one, r).argmax() for r in FusionRule} != {top}:
            failures.append(f"case {case}: n=1 rules disagree")
        counts["collapse"] += 1

        # rescale each ROI by a positive constant and renormalize
        scales = rng.uniform(0.1, 10.0, n)
        raw = probs * scales[:, None]
        rescaled = [_roi(row / math.fsum(row.tolist()), o, i) for i, (row, o) in enumerate(zip(raw, organs))]
        log_raw = np.log(np.maximum(raw, 1e-300)).sum(axis=0)
        gap = np.sort(log_raw)[-1] - np.sort(log_raw)[-2]
        if gap > 1e-9 and fuse_product(rescaled).argmax() != int(np.argmax(log_raw)):
            failures.append(f"case {case}: product argmax changed under scaling")
        if gap > 1e-9 and fuse_product(rescaled).argmax() != fuse_product(rois).argmax():
            failures.append(f"case {case}: product argmax changed under scaling")
        counts["scaling"] += 1

        exact = [float(sum(Fraction(float(v)) for v in col) / n) for col in probs.T]
        if fuse_sum(rois).probabilities.tolist() != exact:
            failures.append(f"case {case}: sum rule is not the exact mean")
        counts["exact_mean"] += 1
    shown = f", e.g. {failures[:3]}" if failures else ""
    verdict(
        not failures and min(counts.values()) >= 1000,
        f"cases per property {counts}, {len(failures)} failures{shown}",
    )


def test_fusion_hand_fixtures(verdict):
    a, b, c = _roi([0.6, 0.4]), _roi([0.2, 0.8], index=1), _roi([0.1, 0.9], index=2)
    s = fuse_sum([a, b]).probabilities
    p = fuse_product([a, b]).probabilities
    v = fuse_vote([a, b, c]).probabilities
    ok = (
        np.allclose(s, [0.4, 0.6], atol=1e-12)
        and np.allclose(p, [3 / 11, 8 / 11], atol=1e-9)
        and np.allclose(v, [1 / 3, 2 / 3], atol=1e-12)
    )
    verdict(ok, f"sum {s.tolist()}, product {p.tolist()}, voting {v.tolist()}")


def test_split_protocol(verdict):
    counts = long_tail_counts(161, LongTailProfile(90.0, 85.6, 6, 762))
    images = [
        ImageRecord(f"sp{s:03d}-{k:04d}", 100, 100, s) for s, n in enumerate(counts) for k in range(n)
    ]
    m = DatasetManifest(tuple(f"sp{s:03d}" for s in range(161)), tuple(images), ())
    spec = SplitSpec(seed=5)
    first = split_dataset(m, spec)
    problems = []
    if set(first) != {im.image_id for im in images}:
        problems.append("not a partition")
    per_species = {}
    for im in images:
        per_species.setdefault(im.species_label, []).append(first[im.image_id])
    for s, labels in per_species.items():
        n = len(labels)
        if labels.count("val") < 1 or labels.count("test") < 1:
            problems.append(f"species {s} lacks val or test")
        if n >= 10 and abs(labels.count("train") / n - 0.70) > 2 / n:
            problems.append(f"species {s} train fraction {labels.count('train') / n:.3f}")
    again = split_dataset(m, spec)
    parallel = split_dataset(m, spec, workers=2)
    if json.dumps(first, sort_keys=True) != json.dumps(again, sort_keys=True) or parallel != first:
        problems.append("not reproducible")
    verdict(
        not problems,
        f"161 species, counts {min(counts)}..{max(counts)}, {len(images)} images, problems: {problems[:3]}",
    )


def test_down_selection_fixture(verdict):
    rng = np.random.default_rng(31)
    qualifying = set(int(s) for s in rng.choice(300, 161, replace=False))
    images, anns = [], []
    b = box(1, 1, 20, 20)
    for s in range(300):
        image_id = f"sp{s:03d}"
        images.append(ImageRecord(image_id, 100, 100, s))
        if s in qualifying:
            leaves, organs = 130 + int(rng.integers(0, 50)), list(ORGANS[1:])
        elif s % 2:
            leaves, organs = 129, list(ORGANS[1:])  # one leaf short
        else:
            leaves = 130 + int(rng.integers(0, 300))
            organs = [o for o in ORGANS[1:] if o != ORGANS[1 + s % 4]]  # an organ missing
        anns += [GroundTruthAnnotation(image_id, LEAF, b)] * leaves
        anns += [GroundTruthAnnotation(image_id, o, b) for o in organs]
    m = DatasetManifest(tuple(f"species {s}" for s in range(300)), tuple(images), tuple(anns))
    kept = down_select(m)
    names = {kept.species_vocabulary[im.species_label] for im in kept.images}
    ok = kept.species_count == 161 and names == {f"species {s}" for s in qualifying}
    verdict(ok, f"kept {kept.species_count} of 300 species (want exactly the 161 qualifying)")


def test_monte_carlo_fusion_beats_organs(verdict):
    config = SimulatorConfig(species_count=161, images_per_species=63, seed=1)
    corpus = generate(config, workers=2)
    n_images = len(corpus.manifest.images)
    organ_report = evaluate_organ_classifiers(corpus.manifest, corpus.rois)
    best_organ = max(organ_report.accuracy, key=organ_report.accuracy.get)
    p_best = organ_report.accuracy[best_organ] / 100
    n_best = organ_report.counts[best_organ]
    report = evaluate_species_id(corpus.manifest, corpus.rois, (FusionRule.SUM,), eval_split=None, workers=2)
    p_sum = report.rule_accuracy[FusionRule.SUM] / 100
    n_sum = report.evaluated_images
    se = math.sqrt(p_sum * (1 - p_sum) / n_sum + p_best * (1 - p_best) / n_best)
    margin = p_sum - p_best
    verdict(
        n_images >= 10_000 and margin > 3 * se,
        f"{n_images} images, sum rule {100 * p_sum:.2f}% vs best organ {best_organ.value} "
        f"{100 * p_best:.2f}%, margin {100 * margin:.2f} pts = {margin / se:.1f} SE (need > 3)",
    )


def test_stats_fixtures(verdict, tmp_path, capsys):
    counts = long_tail_counts(1000, LongTailProfile(90.0, 85.6, 6, 762, total=89970))
    images = [ImageRecord(f"s{s:04d}-{k:03d}", 100, 100, s) for s, n in enumerate(counts) for k in range(n)]
    labels = ["train"] * 62959 + ["test"] * 17995 + ["val"] * 9016
    splits = {im.image_id: label for im, label in zip(images, labels)}
    m = DatasetManifest(tuple(f"species {s}" for s in range(1000)), tuple(images), (), splits)
    path = tmp_path / "manifest.json"
    write_manifest(m, path)
    out_path = tmp_path / "stats.json"
    assert main(["stats", "--manifest", str(path), "-o", str(out_path)]) == 0
    table = capsys.readouterr().out
    doc = json.loads(out_path.read_text())["stats"]
    summary = doc["samples_summary"]
    stats = compute_stats(m)
    split_row = split_table(stats)
    sample_row = samples_table(stats)
    ok = (
        doc["split_counts"] == {"train": 62959, "test": 17995, "val": 9016}
        and split_row in table
        and sample_row in table
        and "62959" in split_row and "17995" in split_row and "9016" in split_row
        and all(s in sample_row for s in ("90.0", "85.6", "6", "762"))
        and (summary["min"], summary["max"]) == (6, 762)
        and round(summary["mean"], 1) == 90.0
        and round(summary["std"], 1) == 85.6
    )
    verdict(
        ok,
        f"splits {doc['split_counts']}, samples mean {summary['mean']:.2f} std {summary['std']:.2f} "
        f"min {summary['min']} max {summary['max']}",
    )


def test_reproducibility(verdict, tmp_path):
    sim = tmp_path / "sim"
    base = ["--species", "5", "--images-per-species", "12", "--seed", "3", "--whole-image-accuracy", "0.7"]
    assert main(["simulate", "--output-dir", str(sim), *base]) == 0
    sim2 = tmp_path / "sim2"
    assert main(["simulate", "--output-dir", str(sim2), *base, "--workers", "2"]) == 0
    mismatched = [
        name
        for name in ("rois.jsonl", "whole_image.jsonl")
        if (sim / name).read_bytes() != (sim2 / name).read_bytes()
    ]
    m, r = str(sim / "manifest.json"), str(sim / "rois.jsonl")
    doc = json.loads((sim / "manifest.json").read_text())
    dets = tmp_path / "dets.json"
    dets.write_text(json.dumps([dict(a, score=0.1 + 0.01 * (i % 50)) for i, a in enumerate(doc["annotations"])]))
    splits = tmp_path / "splits.json"
    assert main(["split", "--manifest", m, "-o", str(splits)]) == 0
    commands = {
        "stats": ["--manifest", m, "--splits", str(splits)],
        "split": ["--manifest", m, "--seed", "9"],
        "down-select": ["--manifest", m, "--min-leaf-rois", "1", "--no-require-all-organs"],
        "nms": ["--detections", str(dets), "--nms-threshold", "0.3"],
        "eval-det": ["--manifest", m, "--detections", str(dets), "--apply-nms"],
        "fuse": ["--rois", r],
        "eval-cls": ["--manifest", m, "--rois", r, "--splits", str(splits)],
        "eval-species": [
            "--manifest", m, "--rois", r, "--splits", str(splits),
            "--fallback", "whole-image", "--whole-image", str(sim / "whole_image.jsonl"),
        ],
    }
    for name, args in commands.items():
        outputs = []
        for k, workers in enumerate(("1", "1", "2")):
            out = tmp_path / f"{name}-{k}.json"
            assert main([name, *args, "--workers", workers, "-o", str(out)]) == 0
            outputs.append(out.read_bytes())
        if len(set(outputs)) != 1:
            mismatched.append(name)
    verdict(not mismatched, f"simulate + {len(commands)} subcommands, rerun and --workers 2; mismatches: {mismatched}")
