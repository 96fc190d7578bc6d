"""Fusion of per-ROI species distributions into one per-image prediction.

The sum rule is the organ-prior-weighted average of the ROI distributions;
the product rule multiplies them (in the log domain, with each probability
floored at ``PRODUCT_EPS``) and renormalizes; the voting rule replaces each
ROI distribution by a one-hot at its argmax before averaging like the sum
rule. Argmax ties resolve to the lowest species index.

Column sums use exactly rounded summation, so the fused vector does not
depend on the order of the ROIs.
"""

from __future__ import annotations

import enum
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ORGANS, OrganClass, RoiPrediction, SpeciesDistribution
from .errors import ConfigError, FusionError, InputFileError, ParseError

PRODUCT_EPS = 1e-12
PRIOR_TOLERANCE = 1e-6


class FusionRule(str, enum.Enum):
    SUM = "sum"
    PRODUCT = "product"
    VOTING = "voting"

    def __str__(self) -> str:
        return self.value


FUSION_RULES: tuple[FusionRule, ...] = tuple(FusionRule)


@dataclass(frozen=True)
class OrganPrior:
    weights: Mapping[OrganClass, float]

    def __post_init__(self) -> None:
        weights = {o: float(self.weights.get(o, 0.0)) for o in ORGANS}
        unknown = set(self.weights) - set(ORGANS)
        if unknown:
            raise ConfigError(f"prior names unknown organs {sorted(map(str, unknown))}")
        if any(not math.isfinite(w) or w < 0 for w in weights.values()):
            raise ConfigError("organ prior weights must be finite and non-negative")
        total = math.fsum(weights.values())
        if abs(total - 1.0) > PRIOR_TOLERANCE:
            raise ConfigError(f"organ prior weights sum to {total!r}, not 1")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls) -> OrganPrior:
        return cls({o: 1.0 / len(ORGANS) for o in ORGANS})

    @classmethod
    def from_mapping(cls, raw: Mapping[str, float]) -> OrganPrior:
        try:
            return cls({OrganClass.parse(k): v for k, v in raw.items()})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> OrganPrior:
        p = Path(path)
        if not p.is_file():
            raise InputFileError(f"no such file: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON: {exc}", str(p)) from exc
        if not isinstance(raw, dict):
            raise ParseError("prior file must map organ names to weights", str(p))
        return cls.from_mapping(raw)

    def weight(self, organ: OrganClass) -> float:
        return self.weights[organ]

    def to_dict(self) -> dict[str, float]:
        return {o.value: self.weights[o] for o in ORGANS}


UNIFORM_PRIOR = OrganPrior.uniform()


@dataclass(frozen=True)
class FusedPrediction:
    image_id: str
    fused_distribution: SpeciesDistribution
    predicted_species: int
    rule: FusionRule
    roi_count: int

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "rule": self.rule.value,
            "predicted_species": self.predicted_species,
            "fused_probs": self.fused_distribution.probabilities.tolist(),
            "roi_count": self.roi_count,
        }


def _stack(rois: Sequence[RoiPrediction]) -> np.ndarray:
    if not rois:
        raise FusionError("no detections for image")
    widths = {len(r.distribution) for r in rois}
    if len(widths) != 1:
        raise FusionError(f"ROI distributions have mixed lengths {sorted(widths)}")
    return np.stack([r.distribution.probabilities for r in rois])


def _column_fsum(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] == 1:
        return rows[0].copy()
    return np.array([math.fsum(col) for col in rows.T.tolist()], dtype=np.float64)


def _exact_mean(col: list[float]) -> float:
    # sum on a common power-of-two denominator, then one correctly rounded int division
    ratios = [x.as_integer_ratio() for x in col]
    den = max(q for _, q in ratios)
    return sum(p * (den // q) for p, q in ratios) / (den * len(col))


def _column_mean(rows: np.ndarray) -> np.ndarray:
    if rows.shape[0] == 1:
        return rows[0].copy()
    return np.array([_exact_mean(col) for col in rows.T.tolist()], dtype=np.float64)


def _weighted_mean(rows: np.ndarray, weights: list[float]) -> np.ndarray:
    if all(w == weights[0] for w in weights):
        if weights[0] == 0.0:
            raise FusionError("all ROI organs have zero prior weight")
        return _column_mean(rows)
    total = math.fsum(weights)
    if total == 0.0:
        raise FusionError("all ROI organs have zero prior weight")
    return _column_fsum(rows * np.asarray(weights)[:, None]) / total


def fuse_sum(rois: Sequence[RoiPrediction], prior: OrganPrior = UNIFORM_PRIOR) -> SpeciesDistribution:
    rows = _stack(rois)
    return SpeciesDistribution.trusted(_weighted_mean(rows, [prior.weight(r.organ) for r in rois]))


def fuse_product(rois: Sequence[RoiPrediction], prior: OrganPrior = UNIFORM_PRIOR) -> SpeciesDistribution:
    """Normalized elementwise product of the ROI distributions.

    ``prior`` is accepted for a uniform call signature but unused: the
    product rule assumes a uniform organ prior.
    """
    rows = _stack(rois)
    log_score = _column_fsum(np.log(np.maximum(rows, PRODUCT_EPS)))
    score = np.exp(log_score - log_score.max())
    return SpeciesDistribution.trusted(score / math.fsum(score.tolist()))


def fuse_vote(rois: Sequence[RoiPrediction], prior: OrganPrior = UNIFORM_PRIOR) -> SpeciesDistribution:
    rows = _stack(rois)
    votes = np.zeros_like(rows)
    votes[np.arange(rows.shape[0]), np.argmax(rows, axis=1)] = 1.0
    return SpeciesDistribution.trusted(_weighted_mean(votes, [prior.weight(r.organ) for r in rois]))


_RULES = {
    FusionRule.SUM: fuse_sum,
    FusionRule.PRODUCT: fuse_product,
    FusionRule.VOTING: fuse_vote,
}


def fuse(rois: Sequence[RoiPrediction], rule: FusionRule, prior: OrganPrior = UNIFORM_PRIOR) -> SpeciesDistribution:
    return _RULES[FusionRule(rule)](rois, prior)


def predict_species(
    rois: Sequence[RoiPrediction], rule: FusionRule, prior: OrganPrior = UNIFORM_PRIOR
) -> FusedPrediction:
    if not rois:
        raise FusionError("no detections for image")
    image_ids = {r.image_id for r in rois}
    if len(image_ids) != 1:
        raise FusionError(f"ROIs span several images: {sorted(image_ids)[:3]}")
    rule = FusionRule(rule)
    dist = fuse(rois, rule, prior)
    return FusedPrediction(
        image_id=rois[0].image_id,
        fused_distribution=dist,
        predicted_species=dist.argmax(),
        rule=rule,
        roi_count=len(rois),
    )


def group_by_image(rois: Sequence[RoiPrediction]) -> dict[str, list[RoiPrediction]]:
    """ROIs keyed by image, each list ordered by ``roi_index``."""
    groups: dict[str, list[RoiPrediction]] = {}
    for r in rois:
        groups.setdefault(r.image_id, []).append(r)
    for members in groups.values():
        members.sort(key=lambda r: r.roi_index)
    return groups
