"""Synthetic ROI-prediction corpora with controllable per-organ accuracy.

Generative model, per image:

* species label fixed by the per-species image counts;
* for each organ, the ROI count is ``min(Poisson(mean), max_rois_per_organ)``;
* each ROI's argmax is the true species with the organ's accuracy, otherwise
  a wrong species drawn uniformly;
* the argmax receives a peak mass drawn uniformly from ``peak_range``. When
  the argmax is wrong, ``true_share`` of the remaining mass goes to the true
  species. What is left is spread over the other species with a symmetric
  Dirichlet of concentration ``spread``.

Every image draws from its own generator seeded by ``(seed, image index)``,
so serial and parallel generation agree bit-for-bit.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .data import (
    CLASSIFIER_INPUT_SIZE,
    ORGANS,
    DatasetManifest,
    GroundTruthAnnotation,
    ImageRecord,
    OrganClass,
    RoiPrediction,
    SpeciesDistribution,
)
from .errors import ConfigError, OrganFusionError
from .geometry import BoundingBox
from .parallel import parallel_map

# Organ-classifier accuracies reported for the five organ classifiers.
REPORTED_ORGAN_ACCURACY = {
    OrganClass.LEAF: 0.6824,
    OrganClass.FLOWER: 0.7524,
    OrganClass.FRUIT: 0.6339,
    OrganClass.STEM: 0.5824,
    OrganClass.HDL: 0.3421,
}
# Mean annotated organs per species and mean images per species of the
# reference corpus; their ratio is the mean organ count per image.
REPORTED_ORGANS_PER_SPECIES = {
    OrganClass.LEAF: 119.0,
    OrganClass.FLOWER: 82.7,
    OrganClass.FRUIT: 30.7,
    OrganClass.STEM: 4.4,
    OrganClass.HDL: 5.2,
}
REPORTED_IMAGES_PER_SPECIES = 90.0
REPORTED_ROIS_PER_IMAGE = {o: n / REPORTED_IMAGES_PER_SPECIES for o, n in REPORTED_ORGANS_PER_SPECIES.items()}

IMAGE_SIZE = (1024, 768)


class SimulationError(OrganFusionError):
    """A generated corpus failed its own consistency check."""

    exit_code = 8


@dataclass(frozen=True)
class LongTailProfile:
    mean: float
    std: float
    minimum: int
    maximum: int
    total: int | None = None


def long_tail_counts(species_count: int, profile: LongTailProfile) -> list[int]:
    """Deterministic per-species counts with the requested summary statistics.

    One species sits at the minimum, one at the maximum; the rest follow
    log-normal quantiles whose location and scale are solved so that the sum
    and sum of squares match the target mean and population std. Counts are
    returned in descending order. The sum is hit exactly (``profile.total``
    or ``round(mean * species_count)``); the std up to integer rounding.
    """
    lo, hi = profile.minimum, profile.maximum
    if species_count < 2:
        raise ConfigError("a long-tail profile needs at least two species")
    if not 0 < lo <= profile.mean <= hi:
        raise ConfigError("profile needs 0 < minimum <= mean <= maximum")
    total = profile.total if profile.total is not None else round(profile.mean * species_count)
    mean = total / species_count
    m = species_count - 2
    rest_sum = total - lo - hi
    rest_sq = species_count * (profile.std**2 + mean**2) - lo**2 - hi**2
    if m == 0:
        if rest_sum != 0:
            raise ConfigError("two species cannot match this profile")
        return [hi, lo]
    if not lo * m <= rest_sum <= hi * m:
        raise ConfigError("profile mean is unreachable within [minimum, maximum]")
    z = np.array([NormalDist().inv_cdf((k + 0.5) / m) for k in range(m)])

    def shaped(sigma: float) -> np.ndarray:
        # find the location giving the target sum after clipping
        a, b = -50.0, 50.0
        for _ in range(200):
            mu = 0.5 * (a + b)
            if np.clip(np.exp(mu + sigma * z), lo, hi).sum() < rest_sum:
                a = mu
            else:
                b = mu
        return np.clip(np.exp(0.5 * (a + b) + sigma * z), lo, hi)

    s_lo, s_hi = 1e-6, 10.0
    for _ in range(200):
        s_mid = 0.5 * (s_lo + s_hi)
        if (shaped(s_mid) ** 2).sum() < rest_sq:
            s_lo = s_mid
        else:
            s_hi = s_mid
    values = shaped(0.5 * (s_lo + s_hi))
    counts = np.clip(np.floor(values), lo, hi).astype(np.int64)
    # largest-remainder rounding onto the exact sum
    short = rest_sum - int(counts.sum())
    frac_order = np.argsort(-(values - counts), kind="stable")
    for j in frac_order:
        if short == 0:
            break
        if counts[j] < hi:
            counts[j] += 1
            short -= 1
    if short:
        raise ConfigError("profile sum is unreachable within [minimum, maximum]")
    return sorted([hi, lo, *counts.tolist()], reverse=True)


@dataclass(frozen=True)
class SimulatorConfig:
    species_count: int = 161
    images_per_species: int | None = 10
    profile: LongTailProfile | None = None
    organ_accuracy: Mapping[OrganClass, float] = field(default_factory=lambda: dict(REPORTED_ORGAN_ACCURACY))
    organ_mean_rois: Mapping[OrganClass, float] = field(default_factory=lambda: dict(REPORTED_ROIS_PER_IMAGE))
    max_rois_per_organ: int = 8
    peak_range: tuple[float, float] = (0.55, 0.95)
    true_share: float = 0.25
    spread: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        acc = {OrganClass.parse(k): float(v) for k, v in self.organ_accuracy.items()}
        means = {OrganClass.parse(k): float(v) for k, v in self.organ_mean_rois.items()}
        object.__setattr__(self, "organ_accuracy", {o: acc.get(o, 0.0) for o in ORGANS})
        object.__setattr__(self, "organ_mean_rois", {o: means.get(o, 0.0) for o in ORGANS})
        object.__setattr__(self, "peak_range", tuple(float(v) for v in self.peak_range))
        self.validate()

    def validate(self) -> None:
        if self.species_count < 2:
            raise ConfigError("species_count must be at least 2")
        if (self.images_per_species is None) == (self.profile is None):
            raise ConfigError("give exactly one of images_per_species and profile")
        if self.images_per_species is not None and self.images_per_species < 1:
            raise ConfigError("images_per_species must be positive")
        for o, a in self.organ_accuracy.items():
            if not 0.0 <= a <= 1.0:
                raise ConfigError(f"{o} accuracy {a} outside [0, 1]")
        if any(m < 0 or not math.isfinite(m) for m in self.organ_mean_rois.values()):
            raise ConfigError("mean ROI counts must be finite and non-negative")
        if not any(m > 0 for m in self.organ_mean_rois.values()):
            raise ConfigError("at least one organ needs a positive mean ROI count")
        if self.max_rois_per_organ < 1:
            raise ConfigError("max_rois_per_organ must be positive")
        low, high = self.peak_range
        if not 0.5 < low <= high <= 1.0:
            raise ConfigError(
                f"peak_range {self.peak_range} is infeasible: the argmax mass must exceed 0.5 "
                "to stay the argmax whatever the spread"
            )
        if not 0.0 <= self.true_share <= 1.0:
            raise ConfigError("true_share must lie in [0, 1]")
        if self.spread <= 0:
            raise ConfigError("spread must be positive")

    def species_counts(self) -> list[int]:
        if self.profile is not None:
            return long_tail_counts(self.species_count, self.profile)
        return [self.images_per_species] * self.species_count

    def to_dict(self) -> dict:
        return {
            "species_count": self.species_count,
            "images_per_species": self.images_per_species,
            "profile": None
            if self.profile is None
            else {
                "mean": self.profile.mean,
                "std": self.profile.std,
                "min": self.profile.minimum,
                "max": self.profile.maximum,
                "total": self.profile.total,
            },
            "organ_accuracy": {o.value: v for o, v in self.organ_accuracy.items()},
            "organ_mean_rois": {o.value: v for o, v in self.organ_mean_rois.items()},
            "max_rois_per_organ": self.max_rois_per_organ,
            "peak_range": list(self.peak_range),
            "true_share": self.true_share,
            "spread": self.spread,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class ScenarioCorpus:
    manifest: DatasetManifest
    rois: tuple[RoiPrediction, ...]
    realized_accuracy: dict[OrganClass, float]
    roi_counts: dict[OrganClass, int]


def image_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1, index))))


def _random_box(rng: np.random.Generator) -> BoundingBox:
    width, height = IMAGE_SIZE
    w = float(rng.integers(16, width // 2))
    h = float(rng.integers(16, height // 2))
    x = float(rng.integers(0, width - int(w) + 1))
    y = float(rng.integers(0, height - int(h) + 1))
    return BoundingBox(x, y, x + w, y + h)


def _roi_distribution(rng, n_species: int, truth: int, correct: bool, config: SimulatorConfig) -> np.ndarray:
    if correct:
        top = truth
    else:
        top = int(rng.integers(0, n_species - 1))
        top += top >= truth
    peak = float(rng.uniform(*config.peak_range))
    probs = np.zeros(n_species, dtype=np.float64)
    residual = 1.0 - peak
    if not correct:
        probs[truth] = residual * config.true_share
        residual -= probs[truth]
    others = [s for s in range(n_species) if s != top and (correct or s != truth)]
    if others:
        probs[others] = residual * rng.dirichlet(np.full(len(others), config.spread))
    else:
        peak += residual
    probs[top] = peak
    return probs / math.fsum(probs.tolist())


def _generate_image(task):
    index, label, config = task
    rng = image_rng(config.seed, index)
    image_id = f"sim-{index:06d}"
    rois = []
    anns = []
    for organ in ORGANS:
        mean = config.organ_mean_rois[organ]
        n = min(int(rng.poisson(mean)), config.max_rois_per_organ) if mean > 0 else 0
        for _ in range(n):
            box = _random_box(rng)
            correct = bool(rng.random() < config.organ_accuracy[organ])
            probs = _roi_distribution(rng, config.species_count, label, correct, config)
            rois.append(
                RoiPrediction(
                    image_id,
                    len(rois),
                    organ,
                    box,
                    SpeciesDistribution(probs),
                    CLASSIFIER_INPUT_SIZE,
                )
            )
            anns.append(GroundTruthAnnotation(image_id, organ, box))
    return ImageRecord(image_id, IMAGE_SIZE[0], IMAGE_SIZE[1], label), anns, rois


def generate(config: SimulatorConfig, workers: int = 1) -> ScenarioCorpus:
    counts = config.species_counts()
    labels = [label for label, n in enumerate(counts) for _ in range(n)]
    tasks = [(k, label, config) for k, label in enumerate(labels)]
    images, annotations, rois = [], [], []
    for image, anns, image_rois in parallel_map(_generate_image, tasks, workers):
        images.append(image)
        annotations.extend(anns)
        rois.extend(image_rois)
    width = max(3, len(str(config.species_count - 1)))
    vocab = tuple(f"species-{s:0{width}d}" for s in range(config.species_count))
    manifest = DatasetManifest(vocab, tuple(images), tuple(annotations))

    correct = {o: 0 for o in ORGANS}
    total = {o: 0 for o in ORGANS}
    for r in rois:
        total[r.organ] += 1
        correct[r.organ] += r.distribution.argmax() == manifest.image(r.image_id).species_label
    realized = {o: correct[o] / total[o] for o in ORGANS if total[o]}
    for o, acc in realized.items():
        target = config.organ_accuracy[o]
        if total[o] >= 1000:
            se = math.sqrt(target * (1.0 - target) / total[o])
            if abs(acc - target) > 3 * se:
                raise SimulationError(
                    f"{o} realized accuracy {acc:.4f} is more than 3 standard errors from {target}"
                )
    return ScenarioCorpus(manifest, tuple(rois), realized, {o: total[o] for o in ORGANS if total[o]})


def whole_image_predictions(
    manifest: DatasetManifest, accuracy: float, config: SimulatorConfig
) -> dict[str, SpeciesDistribution]:
    """Whole-image baseline distributions, drawn like single ROIs at ``accuracy``."""
    if not 0.0 <= accuracy <= 1.0:
        raise ConfigError(f"whole-image accuracy {accuracy} outside [0, 1]")
    out = {}
    for k, im in enumerate(manifest.images):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(2, k))))
        correct = bool(rng.random() < accuracy)
        probs = _roi_distribution(rng, manifest.species_count, im.species_label, correct, config)
        out[im.image_id] = SpeciesDistribution(probs)
    return out
