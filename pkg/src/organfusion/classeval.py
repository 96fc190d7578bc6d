"""Per-organ classifier accuracy, confusion matrices and per-image fused
species-identification accuracy."""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .data import ORGANS, DatasetManifest, OrganClass, RoiPrediction, SpeciesDistribution
from .errors import EvaluationError, ValidationError
from .fusion import FUSION_RULES, UNIFORM_PRIOR, FusedPrediction, FusionRule, OrganPrior, predict_species
from .parallel import parallel_map


class FallbackPolicy(str, enum.Enum):
    """What to do with an evaluated image that has no ROIs."""

    SKIP = "skip"
    WHOLE_IMAGE = "whole-image"

    def __str__(self) -> str:
        return self.value


def percent(correct: int, total: int) -> float:
    return 100.0 * correct / total


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed by (true species, predicted species)."""

    matrix: np.ndarray
    species_vocabulary: tuple[str, ...]

    @classmethod
    def from_pairs(cls, truth: Iterable[int], predicted: Iterable[int], vocabulary: Sequence[str]) -> ConfusionMatrix:
        n = len(vocabulary)
        m = np.zeros((n, n), dtype=np.int64)
        t = np.fromiter(truth, dtype=np.int64)
        p = np.fromiter(predicted, dtype=np.int64)
        np.add.at(m, (t, p), 1)
        m.setflags(write=False)
        return cls(m, tuple(vocabulary))

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.matrix))

    @property
    def accuracy(self) -> float:
        """Percent correct; trace over total."""
        return percent(self.correct, self.total)

    def row_totals(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def to_sparse(self) -> list[list[int]]:
        rows, cols = np.nonzero(self.matrix)
        return [[int(r), int(c), int(self.matrix[r, c])] for r, c in zip(rows, cols)]

    def to_dict(self) -> dict:
        return {"size": len(self.species_vocabulary), "total": self.total, "cells": self.to_sparse()}


@dataclass(frozen=True)
class OrganClassificationReport:
    confusion: dict[OrganClass, ConfusionMatrix]

    @property
    def accuracy(self) -> dict[OrganClass, float]:
        return {o: cm.accuracy for o, cm in self.confusion.items()}

    @property
    def counts(self) -> dict[OrganClass, int]:
        return {o: cm.total for o, cm in self.confusion.items()}

    def to_dict(self) -> dict:
        return {
            "organ_accuracy": {o.value: round(a, 2) for o, a in self.accuracy.items()},
            "organ_counts": {o.value: n for o, n in self.counts.items()},
            "confusion_matrices": {o.value: cm.to_dict() for o, cm in self.confusion.items()},
        }


def _labels(manifest: DatasetManifest, rois: Sequence[RoiPrediction]) -> list[int]:
    labels = []
    for i, r in enumerate(rois):
        if not manifest.has_image(r.image_id):
            raise ValidationError(f"ROI references unknown image_id {r.image_id!r}", record=i)
        if len(r.distribution) != manifest.species_count:
            raise ValidationError(
                f"ROI has {len(r.distribution)} probabilities but the vocabulary has {manifest.species_count}",
                record=i,
            )
        labels.append(manifest.image(r.image_id).species_label)
    return labels


def evaluate_organ_classifiers(manifest: DatasetManifest, rois: Sequence[RoiPrediction]) -> OrganClassificationReport:
    """Confusion matrix of argmax predictions for each organ's classifier.

    Organs without any ROI are absent from the report.
    """
    labels = _labels(manifest, rois)
    truth: dict[OrganClass, list[int]] = {o: [] for o in ORGANS}
    pred: dict[OrganClass, list[int]] = {o: [] for o in ORGANS}
    for r, label in zip(rois, labels):
        truth[r.organ].append(label)
        pred[r.organ].append(r.distribution.argmax())
    return OrganClassificationReport(
        {
            o: ConfusionMatrix.from_pairs(truth[o], pred[o], manifest.species_vocabulary)
            for o in ORGANS
            if truth[o]
        }
    )


@dataclass(frozen=True)
class AccuracyReport:
    rules: tuple[FusionRule, ...]
    rule_correct: dict[FusionRule, int]
    evaluated_images: int
    skipped_images: int
    fallback_images: int
    organ_correct: dict[OrganClass, int]
    organ_counts: dict[OrganClass, int]
    baseline_correct: int | None = None
    fallback_policy: FallbackPolicy = FallbackPolicy.SKIP
    predictions: dict[FusionRule, list[FusedPrediction]] = field(default_factory=dict, repr=False, compare=False)

    @property
    def rule_accuracy(self) -> dict[FusionRule, float]:
        return {r: percent(self.rule_correct[r], self.evaluated_images) for r in self.rules}

    @property
    def organ_accuracy(self) -> dict[OrganClass, float]:
        return {o: percent(self.organ_correct[o], n) for o, n in self.organ_counts.items()}

    @property
    def baseline_accuracy(self) -> float | None:
        if self.baseline_correct is None:
            return None
        return percent(self.baseline_correct, self.evaluated_images)

    def to_dict(self) -> dict:
        base = self.baseline_accuracy
        return {
            "rule_accuracy": {r.value: round(a, 2) for r, a in self.rule_accuracy.items()},
            "rule_correct": {r.value: self.rule_correct[r] for r in self.rules},
            "baseline_accuracy": None if base is None else round(base, 2),
            "baseline_correct": self.baseline_correct,
            "organ_accuracy": {o.value: round(a, 2) for o, a in self.organ_accuracy.items()},
            "organ_correct": {o.value: self.organ_correct[o] for o in self.organ_counts},
            "organ_counts": {o.value: n for o, n in self.organ_counts.items()},
            "evaluated_images": self.evaluated_images,
            "skipped_images": self.skipped_images,
            "fallback_images": self.fallback_images,
            "fallback_policy": self.fallback_policy.value,
        }


def _fuse_image(task) -> list[FusedPrediction]:
    image_rois, rules, prior = task
    return [predict_species(image_rois, rule, prior) for rule in rules]


def fuse_images(
    groups: Mapping[str, Sequence[RoiPrediction]],
    rules: Sequence[FusionRule],
    prior: OrganPrior = UNIFORM_PRIOR,
    workers: int = 1,
) -> dict[str, list[FusedPrediction]]:
    """Fuse every image's ROIs under each rule; keys keep ``groups`` order."""
    ids = list(groups)
    results = parallel_map(_fuse_image, [(groups[i], tuple(rules), prior) for i in ids], workers)
    return dict(zip(ids, results))


def _whole_image_prediction(image_id: str, dist: SpeciesDistribution, rule: FusionRule) -> FusedPrediction:
    return FusedPrediction(image_id, dist, dist.argmax(), rule, 0)


def select_images(manifest: DatasetManifest, eval_split: str | None) -> list[str]:
    """Image ids to evaluate: one split, or every image when ``eval_split`` is None."""
    if eval_split is None:
        return [im.image_id for im in manifest.images]
    if manifest.split_assignments is None:
        raise EvaluationError(f"manifest has no split assignments; cannot select the {eval_split!r} split")
    return [im.image_id for im in manifest.images if manifest.split_assignments.get(im.image_id) == eval_split]


def evaluate_species_id(
    manifest: DatasetManifest,
    rois: Sequence[RoiPrediction],
    rules: Iterable[FusionRule] = FUSION_RULES,
    prior: OrganPrior = UNIFORM_PRIOR,
    fallback_policy: FallbackPolicy = FallbackPolicy.SKIP,
    whole_image: Mapping[str, SpeciesDistribution] | None = None,
    eval_split: str | None = "test",
    workers: int = 1,
) -> AccuracyReport:
    """Per-image species-identification accuracy of each fusion rule.

    Images of ``eval_split`` (all images when None) are fused from their
    ROIs. An image without ROIs is dropped from the denominator under
    ``skip``; under ``whole-image`` its whole-image distribution stands in
    for every rule. When ``whole_image`` predictions are given, their
    accuracy over the same images is reported as the baseline.
    """
    rules = tuple(dict.fromkeys(FusionRule(r) for r in rules))
    if not rules:
        raise EvaluationError("no fusion rules requested")
    fallback_policy = FallbackPolicy(fallback_policy)
    if fallback_policy is FallbackPolicy.WHOLE_IMAGE and whole_image is None:
        raise EvaluationError("whole-image fallback needs whole-image predictions")
    _labels(manifest, rois)
    selected = select_images(manifest, eval_split)
    selected_set = set(selected)

    groups: dict[str, list[RoiPrediction]] = {i: [] for i in selected}
    for r in rois:
        if r.image_id in selected_set:
            groups[r.image_id].append(r)
    for members in groups.values():
        members.sort(key=lambda r: r.roi_index)

    with_rois = {i: g for i, g in groups.items() if g}
    fused = fuse_images(with_rois, rules, prior, workers)

    predictions: dict[FusionRule, list[FusedPrediction]] = {r: [] for r in rules}
    evaluated: list[str] = []
    skipped = fallback = 0
    for image_id in selected:
        if image_id in fused:
            for rule, pred in zip(rules, fused[image_id]):
                predictions[rule].append(pred)
        elif fallback_policy is FallbackPolicy.SKIP:
            skipped += 1
            continue
        else:
            if image_id not in whole_image:
                raise EvaluationError(f"image {image_id!r} has no ROIs and no whole-image prediction")
            fallback += 1
            for rule in rules:
                predictions[rule].append(_whole_image_prediction(image_id, whole_image[image_id], rule))
        evaluated.append(image_id)
    if not evaluated:
        raise EvaluationError("no evaluable images")

    truth = {i: manifest.image(i).species_label for i in evaluated}
    rule_correct = {
        rule: sum(p.predicted_species == truth[p.image_id] for p in predictions[rule]) for rule in rules
    }
    baseline = None
    if whole_image is not None:
        missing = [i for i in evaluated if i not in whole_image]
        if missing:
            raise EvaluationError(f"no whole-image prediction for {len(missing)} evaluated images, e.g. {missing[0]!r}")
        baseline = sum(whole_image[i].argmax() == truth[i] for i in evaluated)

    organ_correct = {o: 0 for o in ORGANS}
    organ_counts = {o: 0 for o in ORGANS}
    for image_id in evaluated:
        for r in groups[image_id]:
            organ_counts[r.organ] += 1
            organ_correct[r.organ] += r.distribution.argmax() == truth[image_id]
    present = [o for o in ORGANS if organ_counts[o]]
    return AccuracyReport(
        rules=rules,
        rule_correct=rule_correct,
        evaluated_images=len(evaluated),
        skipped_images=skipped,
        fallback_images=fallback,
        organ_correct={o: organ_correct[o] for o in present},
        organ_counts={o: organ_counts[o] for o in present},
        baseline_correct=baseline,
        fallback_policy=fallback_policy,
        predictions=predictions,
    )
