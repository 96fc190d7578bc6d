"""Data vocabulary of the pipeline: organ classes, annotations, detections,
per-ROI species distributions and dataset manifests, with file I/O.

File formats
------------
Manifest (JSON document)::

    {"species": ["Acer campestre", ...],
     "images": [{"id": "img-1", "width": 640, "height": 480, "species": 0,
                 "source_query_id": "q-9"}],
     "annotations": [{"image_id": "img-1", "organ": "leaf",
                      "bbox": [x, y, w, h]}],
     "splits": {"img-1": "train"}}

``organ`` may be replaced by a COCO-style ``category_id`` (1=leaf, 2=flower,
3=fruit, 4=stem, 5=hdl). ``splits`` is optional.

Detections (JSON array)::

    [{"image_id": "img-1", "organ": "flower", "bbox": [x, y, w, h], "score": 0.93}]

ROI predictions (JSON lines)::

    {"image_id": "img-1", "roi_index": 0, "organ": "leaf", "bbox": [x, y, w, h],
     "probs": [0.1, 0.7, ...]}

Whole-image predictions (JSON lines)::

    {"image_id": "img-1", "probs": [...]}
"""

from __future__ import annotations

import enum
import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputFileError, ParseError, ValidationError
from .geometry import BoundingBox

PROB_TOLERANCE = 1e-6
CLASSIFIER_INPUT_SIZE = (224, 224)
SPLITS = ("train", "val", "test")


class OrganClass(str, enum.Enum):
    LEAF = "leaf"
    FLOWER = "flower"
    FRUIT = "fruit"
    STEM = "stem"
    HDL = "hdl"

    @classmethod
    def parse(cls, value) -> OrganClass:
        if isinstance(value, OrganClass):
            return value
        if isinstance(value, str):
            try:
                return cls(value.strip().lower())
            except ValueError:
                pass
        raise ValueError(f"unknown organ class {value!r}")

    @classmethod
    def from_category_id(cls, category_id: int) -> OrganClass:
        organs = tuple(cls)
        if isinstance(category_id, bool) or not isinstance(category_id, int) or not 1 <= category_id <= len(organs):
            raise ValueError(f"category_id {category_id!r} is not in 1..{len(organs)}")
        return organs[category_id - 1]

    @property
    def category_id(self) -> int:
        return ORGANS.index(self) + 1

    def __str__(self) -> str:
        return self.value


ORGANS: tuple[OrganClass, ...] = tuple(OrganClass)


@dataclass(frozen=True, slots=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    species_label: int
    source_query_id: str | None = None


@dataclass(frozen=True, slots=True)
class GroundTruthAnnotation:
    image_id: str
    organ: OrganClass
    box: BoundingBox


@dataclass(frozen=True, slots=True)
class Detection:
    image_id: str
    organ: OrganClass
    box: BoundingBox
    confidence: float


class SpeciesDistribution:
    """Read-only probability vector over a species vocabulary."""

    __slots__ = ("probabilities",)

    def __init__(self, probabilities, *, renormalize: bool = True, tolerance: float = PROB_TOLERANCE):
        p = np.array(probabilities, dtype=np.float64).reshape(-1)
        if p.size == 0:
            raise ValidationError("empty probability vector")
        if not np.all(np.isfinite(p)):
            raise ValidationError("non-finite probability entry")
        if np.any(p < 0):
            raise ValidationError(f"negative probability entry at index {int(np.argmax(p < 0))}")
        total = math.fsum(p.tolist())
        if abs(total - 1.0) > tolerance:
            raise ValidationError(f"probabilities sum to {total!r}, not 1 within {tolerance:g}")
        if renormalize and total != 1.0:
            p = p / total
        p.setflags(write=False)
        self.probabilities = p

    @classmethod
    def trusted(cls, probabilities: np.ndarray) -> SpeciesDistribution:
        """Wrap an already-normalized array without re-validating it."""
        obj = cls.__new__(cls)
        p = np.asarray(probabilities, dtype=np.float64)
        p.setflags(write=False)
        obj.probabilities = p
        return obj

    def __len__(self) -> int:
        return self.probabilities.shape[0]

    def argmax(self) -> int:
        # np.argmax returns the first maximum, i.e. ties go to the lowest index
        return int(np.argmax(self.probabilities))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpeciesDistribution):
            return NotImplemented
        return np.array_equal(self.probabilities, other.probabilities)

    def __hash__(self):
        return hash(self.probabilities.tobytes())

    def __repr__(self) -> str:
        return f"SpeciesDistribution({self.probabilities.tolist()!r})"


@dataclass(frozen=True, slots=True)
class RoiPrediction:
    image_id: str
    roi_index: int
    organ: OrganClass
    box: BoundingBox
    distribution: SpeciesDistribution
    input_size: tuple[int, int] | None = None


@dataclass(frozen=True)
class DatasetManifest:
    species_vocabulary: tuple[str, ...]
    images: tuple[ImageRecord, ...]
    annotations: tuple[GroundTruthAnnotation, ...] = ()
    split_assignments: Mapping[str, str] | None = None
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "species_vocabulary", tuple(self.species_vocabulary))
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if self.split_assignments is not None:
            object.__setattr__(self, "split_assignments", dict(self.split_assignments))
        object.__setattr__(self, "_by_id", {im.image_id: im for im in self.images})
        self.validate()

    def validate(self, source: str | None = None) -> None:
        """Check every invariant; raise on the first offending record."""
        if len(set(self.species_vocabulary)) != len(self.species_vocabulary):
            dupes = sorted({s for s in self.species_vocabulary if self.species_vocabulary.count(s) > 1})
            raise ValidationError(f"duplicate species names {dupes[:3]}", source)
        n_species = len(self.species_vocabulary)
        seen: set[str] = set()
        for i, im in enumerate(self.images):
            if im.image_id in seen:
                raise ValidationError(f"duplicate image_id {im.image_id!r}", source, f"images[{i}]")
            seen.add(im.image_id)
            if im.width <= 0 or im.height <= 0:
                raise ValidationError(f"image {im.image_id!r} has non-positive size", source, f"images[{i}]")
            if not 0 <= im.species_label < n_species:
                raise ValidationError(
                    f"image {im.image_id!r} species index {im.species_label} outside vocabulary of {n_species}",
                    source,
                    f"images[{i}]",
                )
        for i, ann in enumerate(self.annotations):
            im = self._by_id.get(ann.image_id)
            if im is None:
                raise ValidationError(f"annotation references unknown image_id {ann.image_id!r}", source, f"annotations[{i}]")
            if not ann.box.fits_within(im.width, im.height):
                raise ValidationError(
                    f"annotation box {ann.box.as_tuple()} outside image {ann.image_id!r} "
                    f"({im.width}x{im.height})",
                    source,
                    f"annotations[{i}]",
                )
        if self.split_assignments is not None:
            for image_id, split in self.split_assignments.items():
                if image_id not in self._by_id:
                    raise ValidationError(f"split assignment for unknown image_id {image_id!r}", source)
                if split not in SPLITS:
                    raise ValidationError(f"image {image_id!r} has unknown split {split!r}", source)

    def image(self, image_id: str) -> ImageRecord:
        return self._by_id[image_id]

    def has_image(self, image_id: str) -> bool:
        return image_id in self._by_id

    @property
    def species_count(self) -> int:
        return len(self.species_vocabulary)

    def with_splits(self, splits: Mapping[str, str] | None) -> DatasetManifest:
        return DatasetManifest(self.species_vocabulary, self.images, self.annotations, splits)

    def split_of(self, image_id: str) -> str | None:
        if self.split_assignments is None:
            return None
        return self.split_assignments.get(image_id)


# ---------------------------------------------------------------------------
# parsing helpers


def _read_text(path) -> str:
    p = Path(path)
    if not p.is_file():
        raise InputFileError(f"no such file: {p}")
    try:
        return p.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise InputFileError(f"cannot read {p}: {exc}") from exc


def _read_json(path):
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}", str(path)) from exc


def _read_jsonl(path) -> list:
    records = []
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON on line {lineno}: {exc}", str(path)) from exc
    return records


def _require(rec, key, source, index):
    if not isinstance(rec, dict):
        raise ParseError(f"expected an object, got {type(rec).__name__}", source, index)
    if key not in rec:
        raise ParseError(f"missing field {key!r}", source, index)
    return rec[key]


def _image_id(value, source, index) -> str:
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise ParseError(f"image_id must be a string or integer, got {value!r}", source, index)
    return str(value)


def _organ(rec, source, index) -> OrganClass:
    try:
        if "organ" in rec:
            return OrganClass.parse(rec["organ"])
        if "category_id" in rec:
            return OrganClass.from_category_id(rec["category_id"])
    except (ValueError, TypeError) as exc:
        raise ValidationError(str(exc), source, index) from exc
    raise ParseError("missing field 'organ' (or 'category_id')", source, index)


def _box(rec, source, index) -> BoundingBox:
    raw = _require(rec, "bbox", source, index)
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ParseError(f"bbox must be [x, y, w, h], got {raw!r}", source, index)
    try:
        x, y, w, h = (float(v) for v in raw)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"non-numeric bbox {raw!r}", source, index) from exc
    try:
        return BoundingBox.from_xywh(x, y, w, h)
    except ValidationError as exc:
        raise ValidationError(str(exc), source, index) from exc


def _check_in_image(box: BoundingBox, image_id: str, manifest: DatasetManifest | None, source, index):
    if manifest is None:
        return
    if not manifest.has_image(image_id):
        raise ValidationError(f"unknown image_id {image_id!r}", source, index)
    im = manifest.image(image_id)
    if not box.fits_within(im.width, im.height):
        raise ValidationError(
            f"box {box.as_tuple()} outside image {image_id!r} ({im.width}x{im.height})", source, index
        )


def _distribution(rec, source, index, n_species: int | None) -> SpeciesDistribution:
    raw = _require(rec, "probs", source, index)
    if not isinstance(raw, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
    ):
        raise ParseError("probs must be a list of numbers", source, index)
    if n_species is not None and len(raw) != n_species:
        raise ValidationError(
            f"probs has {len(raw)} entries but the vocabulary has {n_species} species", source, index
        )
    try:
        return SpeciesDistribution(raw)
    except ValidationError as exc:
        raise ValidationError(str(exc), source, index) from exc


def _positive_int(value, what, source, index) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ParseError(f"{what} must be an integer, got {value!r}", source, index)
    return int(value)


# ---------------------------------------------------------------------------
# manifest


def parse_manifest(doc, source: str | None = None) -> DatasetManifest:
    if not isinstance(doc, dict):
        raise ParseError("manifest must be a JSON object", source)
    species = doc.get("species")
    if not isinstance(species, list) or not all(isinstance(s, str) for s in species):
        raise ParseError("'species' must be a list of names", source)
    name_to_index = {name: i for i, name in enumerate(species)}
    images_raw = doc.get("images")
    if not isinstance(images_raw, list):
        raise ParseError("'images' must be a list", source)
    images = []
    for i, rec in enumerate(images_raw):
        where = f"images[{i}]"
        raw_id = rec.get("id", rec.get("image_id")) if isinstance(rec, dict) else None
        if raw_id is None:
            raise ParseError("image record needs 'id'", source, where)
        label = _require(rec, "species", source, where)
        if isinstance(label, str):
            if label not in name_to_index:
                raise ValidationError(f"unknown species name {label!r}", source, where)
            label = name_to_index[label]
        query = rec.get("source_query_id")
        images.append(
            ImageRecord(
                image_id=_image_id(raw_id, source, where),
                width=_positive_int(_require(rec, "width", source, where), "width", source, where),
                height=_positive_int(_require(rec, "height", source, where), "height", source, where),
                species_label=_positive_int(label, "species", source, where),
                source_query_id=None if query is None else str(query),
            )
        )
    annotations_raw = doc.get("annotations", [])
    if not isinstance(annotations_raw, list):
        raise ParseError("'annotations' must be a list", source)
    annotations = []
    for i, rec in enumerate(annotations_raw):
        where = f"annotations[{i}]"
        annotations.append(
            GroundTruthAnnotation(
                image_id=_image_id(_require(rec, "image_id", source, where), source, where),
                organ=_organ(rec, source, where),
                box=_box(rec, source, where),
            )
        )
    splits = doc.get("splits")
    if splits is not None:
        if not isinstance(splits, dict):
            raise ParseError("'splits' must map image_id to split name", source)
        splits = {str(k): v for k, v in splits.items()}
    try:
        return DatasetManifest(tuple(species), tuple(images), tuple(annotations), splits)
    except ValidationError as exc:
        if exc.source is None and source is not None:
            raise ValidationError(str(exc), source) from exc
        raise


def load_manifest(path) -> DatasetManifest:
    return parse_manifest(_read_json(path), str(path))


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    images = []
    for im in manifest.images:
        rec = {"id": im.image_id, "width": im.width, "height": im.height, "species": im.species_label}
        if im.source_query_id is not None:
            rec["source_query_id"] = im.source_query_id
        images.append(rec)
    doc = {
        "species": list(manifest.species_vocabulary),
        "categories": [{"id": o.category_id, "name": o.value} for o in ORGANS],
        "images": images,
        "annotations": [
            {"image_id": a.image_id, "organ": a.organ.value, "bbox": a.box.to_xywh()}
            for a in manifest.annotations
        ],
    }
    if manifest.split_assignments is not None:
        doc["splits"] = dict(manifest.split_assignments)
    return doc


def write_manifest(manifest: DatasetManifest, path) -> None:
    _write_json(manifest_to_dict(manifest), path)


# ---------------------------------------------------------------------------
# detections


def parse_detections(doc, source: str | None = None, manifest: DatasetManifest | None = None) -> list[Detection]:
    if isinstance(doc, dict) and "detections" in doc:
        doc = doc["detections"]
    if not isinstance(doc, list):
        raise ParseError("detections file must be a JSON array", source)
    out = []
    for i, rec in enumerate(doc):
        image_id = _image_id(_require(rec, "image_id", source, i), source, i)
        score = _require(rec, "score", source, i)
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ParseError(f"score must be a number, got {score!r}", source, i)
        if not 0.0 <= score <= 1.0:
            raise ValidationError(f"score {score!r} outside [0, 1]", source, i)
        box = _box(rec, source, i)
        _check_in_image(box, image_id, manifest, source, i)
        out.append(Detection(image_id, _organ(rec, source, i), box, float(score)))
    return out


def load_detections(path, manifest: DatasetManifest | None = None) -> list[Detection]:
    return parse_detections(_read_json(path), str(path), manifest)


def detections_to_list(detections: Iterable[Detection]) -> list[dict]:
    return [
        {"image_id": d.image_id, "organ": d.organ.value, "bbox": d.box.to_xywh(), "score": d.confidence}
        for d in detections
    ]


def write_detections(detections: Iterable[Detection], path) -> None:
    _write_json(detections_to_list(detections), path)


# ---------------------------------------------------------------------------
# ROI predictions


def parse_roi_predictions(
    records: list, source: str | None = None, manifest: DatasetManifest | None = None
) -> list[RoiPrediction]:
    n_species = manifest.species_count if manifest is not None else None
    out = []
    seen: set[tuple[str, int]] = set()
    for i, rec in enumerate(records):
        image_id = _image_id(_require(rec, "image_id", source, i), source, i)
        roi_index = _require(rec, "roi_index", source, i)
        roi_index = _positive_int(roi_index, "roi_index", source, i)
        if roi_index < 0:
            raise ValidationError(f"negative roi_index {roi_index}", source, i)
        key = (image_id, roi_index)
        if key in seen:
            raise ValidationError(f"duplicate ROI {key}", source, i)
        seen.add(key)
        box = _box(rec, source, i)
        _check_in_image(box, image_id, manifest, source, i)
        size = rec.get("input_size")
        if size is not None:
            if not isinstance(size, list) or len(size) != 2:
                raise ParseError(f"input_size must be [w, h], got {size!r}", source, i)
            size = (
                _positive_int(size[0], "input_size", source, i),
                _positive_int(size[1], "input_size", source, i),
            )
        out.append(
            RoiPrediction(
                image_id=image_id,
                roi_index=roi_index,
                organ=_organ(rec, source, i),
                box=box,
                distribution=_distribution(rec, source, i, n_species),
                input_size=size,
            )
        )
    if n_species is None and out:
        widths = {len(r.distribution) for r in out}
        if len(widths) > 1:
            raise ValidationError(f"ROI probability vectors have mixed lengths {sorted(widths)}", source)
    return out


def load_roi_predictions(path, manifest: DatasetManifest | None = None) -> list[RoiPrediction]:
    return parse_roi_predictions(_read_jsonl(path), str(path), manifest)


def roi_to_dict(r: RoiPrediction) -> dict:
    rec = {
        "image_id": r.image_id,
        "roi_index": r.roi_index,
        "organ": r.organ.value,
        "bbox": r.box.to_xywh(),
        "probs": r.distribution.probabilities.tolist(),
    }
    if r.input_size is not None:
        rec["input_size"] = list(r.input_size)
    return rec


def write_roi_predictions(rois: Iterable[RoiPrediction], path) -> None:
    _write_jsonl((roi_to_dict(r) for r in rois), path)


def load_whole_image_predictions(path, manifest: DatasetManifest | None = None) -> dict[str, SpeciesDistribution]:
    source = str(path)
    n_species = manifest.species_count if manifest is not None else None
    out: dict[str, SpeciesDistribution] = {}
    for i, rec in enumerate(_read_jsonl(path)):
        image_id = _image_id(_require(rec, "image_id", source, i), source, i)
        if image_id in out:
            raise ValidationError(f"duplicate whole-image prediction for {image_id!r}", source, i)
        if manifest is not None and not manifest.has_image(image_id):
            raise ValidationError(f"unknown image_id {image_id!r}", source, i)
        out[image_id] = _distribution(rec, source, i, n_species)
    return out


def write_whole_image_predictions(preds: Mapping[str, SpeciesDistribution], path) -> None:
    _write_jsonl(({"image_id": k, "probs": v.probabilities.tolist()} for k, v in preds.items()), path)


# ---------------------------------------------------------------------------
# splits


def load_splits(path, manifest: DatasetManifest | None = None) -> dict[str, str]:
    doc = _read_json(path)
    if isinstance(doc, dict) and "assignments" in doc:
        doc = doc["assignments"]
    if not isinstance(doc, dict):
        raise ParseError("split file must map image_id to split name", str(path))
    splits = {str(k): v for k, v in doc.items()}
    if manifest is not None:
        manifest.with_splits(splits).validate(str(path))
    return splits


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _write_jsonl(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
