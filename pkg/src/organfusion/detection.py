"""Class-aware NMS and COCO-style average precision for organ detections.

Matching follows the COCO convention: detections are visited in descending
confidence and each takes the still-unmatched ground truth of highest IoU at
or above the threshold. AP is the 101-point interpolated average precision,
averaged over IoU thresholds 0.50:0.05:0.95. Confidence ties are broken by
input order everywhere.
"""

from __future__ import annotations

import math
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import ORGANS, DatasetManifest, Detection, GroundTruthAnnotation, OrganClass
from .errors import EvaluationError
from .parallel import parallel_map

DEFAULT_NMS_THRESHOLD = 0.1
IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))
RECALL_LEVELS = 101


def _confidence_order(dets: Sequence[Detection]) -> list[int]:
    # sorted() is stable, so equal confidences keep input order
    return sorted(range(len(dets)), key=lambda i: -dets[i].confidence)


def _boxes(items) -> np.ndarray:
    if not items:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([it.box.as_tuple() for it in items], dtype=np.float64)


def nms(dets: Sequence[Detection], iou_threshold: float = DEFAULT_NMS_THRESHOLD) -> list[Detection]:
    """Greedy non-maximum suppression within each organ class.

    A detection survives iff its IoU with every higher-confidence survivor of
    the same class (and image) is at most ``iou_threshold``. The result is in
    descending-confidence order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold {iou_threshold} outside [0, 1]")
    order = _confidence_order(dets)
    groups: dict[tuple[str, OrganClass], list[int]] = defaultdict(list)
    for i in order:
        groups[(dets[i].image_id, dets[i].organ)].append(i)
    kept: set[int] = set()
    for members in groups.values():
        keep = kernels.nms_keep(_boxes([dets[i] for i in members]), iou_threshold)
        kept.update(members[k] for k in keep)
    return [dets[i] for i in order if i in kept]


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one image+class at one IoU threshold.

    ``detection_matches[i]`` is the index of the ground truth matched to the
    i-th input detection, or None for a false positive.
    """

    detection_matches: tuple[int | None, ...]
    gt_matched: tuple[bool, ...]
    iou_threshold: float

    @property
    def true_positives(self) -> int:
        return sum(m is not None for m in self.detection_matches)

    @property
    def false_positives(self) -> int:
        return sum(m is None for m in self.detection_matches)

    @property
    def false_negatives(self) -> int:
        return sum(not m for m in self.gt_matched)


def match_detections(
    gt: Sequence[GroundTruthAnnotation], dets: Sequence[Detection], iou_threshold: float
) -> MatchResult:
    order = _confidence_order(dets)
    ious = kernels.iou_matrix(_boxes([dets[i] for i in order]), _boxes(gt))
    matches = kernels.greedy_match(ious, np.array([iou_threshold]))[0]
    det_matches: list[int | None] = [None] * len(dets)
    gt_matched = [False] * len(gt)
    for rank, i in enumerate(order):
        g = int(matches[rank])
        if g >= 0:
            det_matches[i] = g
            gt_matched[g] = True
    return MatchResult(tuple(det_matches), tuple(gt_matched), iou_threshold)


@dataclass(frozen=True)
class PrecisionRecallCurve:
    """TP/FP outcomes of detections in descending-confidence order."""

    tp: np.ndarray
    n_gt: int

    def __post_init__(self) -> None:
        tp = np.ascontiguousarray(self.tp, dtype=np.uint8).reshape(-1)
        tp.setflags(write=False)
        object.__setattr__(self, "tp", tp)

    @property
    def recall(self) -> np.ndarray:
        if self.n_gt == 0:
            return np.zeros(len(self.tp))
        return np.cumsum(self.tp) / self.n_gt

    @property
    def precision(self) -> np.ndarray:
        return np.cumsum(self.tp) / np.arange(1, len(self.tp) + 1)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def average_precision(curve: PrecisionRecallCurve) -> float:
    """101-point interpolated AP of a curve with at least one ground truth."""
    if curve.n_gt <= 0:
        raise ValueError("average precision is undefined without ground truth")
    return math.fsum(kernels.interpolated_precision(curve.tp, curve.n_gt).tolist()) / RECALL_LEVELS


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    max_detections: int | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.iou_thresholds:
            raise ValueError("at least one IoU threshold is required")
        if any(not 0.0 < t <= 1.0 for t in self.iou_thresholds):
            raise ValueError(f"IoU thresholds must lie in (0, 1]: {self.iou_thresholds}")
        if self.max_detections is not None and self.max_detections < 1:
            raise ValueError("max_detections must be positive")


@dataclass(frozen=True)
class ApReport:
    ap: float
    ap50: float
    ap75: float
    per_organ_ap: dict[OrganClass, float]
    iou_thresholds: tuple[float, ...]
    per_organ_ap_by_threshold: dict[OrganClass, tuple[float, ...]] = field(default_factory=dict)
    gt_counts: dict[OrganClass, int] = field(default_factory=dict)
    detection_counts: dict[OrganClass, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "per_organ_ap": {o.value: v for o, v in self.per_organ_ap.items()},
            "iou_thresholds": list(self.iou_thresholds),
            "per_organ_ap_by_threshold": {
                o.value: list(v) for o, v in self.per_organ_ap_by_threshold.items()
            },
            "gt_counts": {o.value: n for o, n in self.gt_counts.items()},
            "detection_counts": {o.value: n for o, n in self.detection_counts.items()},
        }


def _match_image(task):
    det_boxes, gt_boxes, thresholds = task
    return kernels.greedy_match(kernels.iou_matrix(det_boxes, gt_boxes), thresholds)


def evaluate_detections(
    manifest: DatasetManifest, detections: Sequence[Detection], config: EvalConfig | None = None
) -> ApReport:
    """COCO-style AP of ``detections`` against the manifest's annotations.

    Per-class AP is computed at every threshold; ``ap`` averages over all
    (class, threshold) pairs, ``ap50``/``ap75`` over classes at one threshold.
    Classes without ground truth are left out of every mean.
    """
    config = config or EvalConfig()
    if not manifest.annotations:
        raise EvaluationError("no ground-truth annotations to evaluate against")
    for d in detections:
        if not manifest.has_image(d.image_id):
            raise EvaluationError(f"detection for unknown image_id {d.image_id!r}")

    thresholds = tuple(config.iou_thresholds)
    extra = tuple(t for t in (0.5, 0.75) if t not in thresholds)
    all_thresholds = np.array(thresholds + extra, dtype=np.float64)

    gt_by_key: dict[tuple[OrganClass, str], list[GroundTruthAnnotation]] = defaultdict(list)
    for a in manifest.annotations:
        gt_by_key[(a.organ, a.image_id)].append(a)
    det_by_key: dict[tuple[OrganClass, str], list[int]] = defaultdict(list)
    for i, d in enumerate(detections):
        det_by_key[(d.organ, d.image_id)].append(i)

    gt_counts = {o: 0 for o in ORGANS}
    for (organ, _), anns in gt_by_key.items():
        gt_counts[organ] += len(anns)
    present = [o for o in ORGANS if gt_counts[o] > 0]

    keys = sorted(
        (k for k in det_by_key if k[0] in gt_counts and gt_counts[k[0]] > 0),
        key=lambda k: (ORGANS.index(k[0]), k[1]),
    )
    ranked: dict[tuple[OrganClass, str], list[int]] = {}
    tasks = []
    for key in keys:
        idx = det_by_key[key]
        order = sorted(idx, key=lambda i: -detections[i].confidence)
        if config.max_detections is not None:
            order = order[: config.max_detections]
        ranked[key] = order
        tasks.append((_boxes([detections[i] for i in order]), _boxes(gt_by_key.get(key, [])), all_thresholds))
    results = parallel_map(_match_image, tasks, config.workers)

    # per class: (confidence, input index, tp flags over thresholds)
    scored: dict[OrganClass, list[tuple[float, int, np.ndarray]]] = defaultdict(list)
    for key, matches in zip(keys, results):
        for rank, i in enumerate(ranked[key]):
            scored[key[0]].append((detections[i].confidence, i, matches[:, rank] >= 0))

    per_class: dict[OrganClass, list[float]] = {}
    for organ in present:
        entries = sorted(scored.get(organ, []), key=lambda e: (-e[0], e[1]))
        flags = np.array([e[2] for e in entries], dtype=np.uint8).reshape(len(entries), len(all_thresholds))
        per_class[organ] = [
            average_precision(PrecisionRecallCurve(flags[:, t], gt_counts[organ]))
            for t in range(len(all_thresholds))
        ]

    n_main = len(thresholds)
    col50 = (thresholds + extra).index(0.5)
    col75 = (thresholds + extra).index(0.75)
    per_organ = {o: math.fsum(per_class[o][:n_main]) / n_main for o in present}
    return ApReport(
        ap=math.fsum(v for o in present for v in per_class[o][:n_main]) / (n_main * len(present)),
        ap50=math.fsum(per_class[o][col50] for o in present) / len(present),
        ap75=math.fsum(per_class[o][col75] for o in present) / len(present),
        per_organ_ap=per_organ,
        iou_thresholds=thresholds,
        per_organ_ap_by_threshold={o: tuple(per_class[o][:n_main]) for o in present},
        gt_counts={o: gt_counts[o] for o in present},
        detection_counts={o: len(scored.get(o, [])) for o in present},
    )
