"""Per-species splitting, species down-selection and dataset statistics."""

from __future__ import annotations

import hashlib
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .data import ORGANS, SPLITS, DatasetManifest, OrganClass
from .errors import ConfigError, ValidationError
from .parallel import parallel_map

SHUFFLE_ALGORITHM = "numpy-PCG64/SeedSequence(seed, sha256(species)[:8])"


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    val: float = 0.10
    test: float = 0.20
    min_one_rule_threshold: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        fracs = (self.train, self.val, self.test)
        if any(f < 0 for f in fracs):
            raise ConfigError("split fractions must be non-negative")
        if abs(math.fsum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions sum to {math.fsum(fracs)}, not 1")
        if self.min_one_rule_threshold < 3:
            raise ConfigError("min_one_rule_threshold must be at least 3")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")


def split_sizes(n: int, spec: SplitSpec = SplitSpec()) -> tuple[int, int, int]:
    """(train, val, test) image counts for a species with ``n`` images.

    Validation and test take ``floor(fraction * n)``; below the min-one
    threshold each gets at least one image. Training takes the remainder.
    """
    n_val = math.floor(n * Fraction(str(spec.val)))
    n_test = math.floor(n * Fraction(str(spec.test)))
    if n < spec.min_one_rule_threshold:
        n_val, n_test = max(1, n_val), max(1, n_test)
    return n - n_val - n_test, n_val, n_test


def species_rng(seed: int, species_name: str) -> np.random.Generator:
    key = int.from_bytes(hashlib.sha256(species_name.encode("utf-8")).digest()[:8], "big")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, key])))


def _split_species(task) -> list[tuple[str, str]]:
    name, image_ids, spec = task
    ids = sorted(image_ids)
    n_train, n_val, _ = split_sizes(len(ids), spec)
    perm = species_rng(spec.seed, name).permutation(len(ids))
    out = []
    for rank, j in enumerate(perm.tolist()):
        if rank < n_train:
            split = "train"
        elif rank < n_train + n_val:
            split = "val"
        else:
            split = "test"
        out.append((ids[j], split))
    return out


def split_dataset(manifest: DatasetManifest, spec: SplitSpec = SplitSpec(), workers: int = 1) -> dict[str, str]:
    """Assign every image to train/val/test, independently per species.

    Each species' image ids are sorted, shuffled with a generator seeded from
    ``(spec.seed, species name)`` and cut into consecutive train, val and test
    blocks. The result does not depend on manifest order or worker count.
    """
    by_species: dict[int, list[str]] = defaultdict(list)
    for im in manifest.images:
        by_species[im.species_label].append(im.image_id)
    for label in sorted(by_species):
        if len(by_species[label]) < 3:
            name = manifest.species_vocabulary[label]
            raise ValidationError(
                f"species {name!r} has {len(by_species[label])} images; at least 3 are needed for a split"
            )
    tasks = [(manifest.species_vocabulary[label], by_species[label], spec) for label in sorted(by_species)]
    assignment: dict[str, str] = {}
    for pairs in parallel_map(_split_species, tasks, workers):
        assignment.update(pairs)
    return {im.image_id: assignment[im.image_id] for im in manifest.images}


def down_select(manifest: DatasetManifest, min_leaf_rois: int = 130, require_all_organs: bool = True) -> DatasetManifest:
    """Keep species with enough leaf annotations (and every organ, if asked).

    The surviving species are re-indexed densely in their original order;
    images of dropped species, their annotations and split entries go too.
    """
    species_of = {im.image_id: im.species_label for im in manifest.images}
    organ_counts: dict[int, Counter] = defaultdict(Counter)
    for a in manifest.annotations:
        organ_counts[species_of[a.image_id]][a.organ] += 1

    def qualifies(label: int) -> bool:
        counts = organ_counts.get(label, Counter())
        if counts[OrganClass.LEAF] < min_leaf_rois:
            return False
        return not require_all_organs or all(counts[o] >= 1 for o in ORGANS)

    kept = [label for label in range(manifest.species_count) if qualifies(label)]
    if not kept:
        raise ConfigError("down-selection criteria leave no species")
    remap = {old: new for new, old in enumerate(kept)}
    images = [
        replace(im, species_label=remap[im.species_label])
        for im in manifest.images
        if im.species_label in remap
    ]
    kept_ids = {im.image_id for im in images}
    annotations = [a for a in manifest.annotations if a.image_id in kept_ids]
    splits = None
    if manifest.split_assignments is not None:
        splits = {k: v for k, v in manifest.split_assignments.items() if k in kept_ids}
    vocab = [manifest.species_vocabulary[label] for label in kept]
    return DatasetManifest(tuple(vocab), tuple(images), tuple(annotations), splits)


@dataclass(frozen=True)
class Summary:
    """Count summary with population standard deviation."""

    mean: float
    std: float
    minimum: float
    maximum: float

    @classmethod
    def of(cls, values) -> Summary:
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            return cls(0.0, 0.0, 0.0, 0.0)
        mean = math.fsum(v.tolist()) / v.size
        var = math.fsum(((v - mean) ** 2).tolist()) / v.size
        return cls(mean, math.sqrt(var), float(v.min()), float(v.max()))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "min": self.minimum, "max": self.maximum}


@dataclass(frozen=True)
class BoxScale:
    count: int
    mean_width: float
    mean_height: float
    std_width: float
    std_height: float

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": [self.mean_width, self.mean_height],
            "std": [self.std_width, self.std_height],
        }


@dataclass(frozen=True)
class DatasetStats:
    total_images: int
    total_annotations: int
    split_counts: dict[str, int] | None
    samples_per_species: dict[str, int]
    samples_summary: Summary
    organs_per_species: dict[OrganClass, Summary]
    box_scale: dict[OrganClass, BoxScale | None]
    samples_curve: tuple[int, ...]
    organs_curve: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "total_images": self.total_images,
            "total_annotations": self.total_annotations,
            "split_counts": self.split_counts,
            "samples_per_species": self.samples_per_species,
            "samples_summary": self.samples_summary.to_dict(),
            "organs_per_species": {o.value: s.to_dict() for o, s in self.organs_per_species.items()},
            "box_scale": {o.value: (s.to_dict() if s else None) for o, s in self.box_scale.items()},
            "long_tail": {
                "samples_per_species_desc": list(self.samples_curve),
                "organs_per_species_desc": list(self.organs_curve),
            },
        }


def compute_stats(manifest: DatasetManifest) -> DatasetStats:
    n_species = manifest.species_count
    samples = np.zeros(n_species, dtype=np.int64)
    for im in manifest.images:
        samples[im.species_label] += 1
    species_of = {im.image_id: im.species_label for im in manifest.images}
    organ_counts = {o: np.zeros(n_species, dtype=np.int64) for o in ORGANS}
    sizes: dict[OrganClass, list[tuple[float, float]]] = {o: [] for o in ORGANS}
    for a in manifest.annotations:
        organ_counts[a.organ][species_of[a.image_id]] += 1
        sizes[a.organ].append((a.box.width, a.box.height))

    box_scale: dict[OrganClass, BoxScale | None] = {}
    for o in ORGANS:
        if not sizes[o]:
            box_scale[o] = None
            continue
        w = Summary.of([s[0] for s in sizes[o]])
        h = Summary.of([s[1] for s in sizes[o]])
        box_scale[o] = BoxScale(len(sizes[o]), w.mean, h.mean, w.std, h.std)

    split_counts = None
    if manifest.split_assignments is not None:
        tally = Counter(manifest.split_assignments.values())
        split_counts = {s: tally.get(s, 0) for s in SPLITS}
        unassigned = len(manifest.images) - sum(split_counts.values())
        if unassigned:
            split_counts["unassigned"] = unassigned

    organs_total = sum(organ_counts.values())
    return DatasetStats(
        total_images=len(manifest.images),
        total_annotations=len(manifest.annotations),
        split_counts=split_counts,
        samples_per_species={manifest.species_vocabulary[i]: int(c) for i, c in enumerate(samples)},
        samples_summary=Summary.of(samples),
        organs_per_species={o: Summary.of(organ_counts[o]) for o in ORGANS},
        box_scale=box_scale,
        samples_curve=tuple(int(c) for c in sorted(samples.tolist(), reverse=True)),
        organs_curve=tuple(int(c) for c in sorted(np.asarray(organs_total).tolist(), reverse=True)),
    )
