import numpy as np
import pytest

from organfusion.data import (
    DatasetManifest,
    Detection,
    GroundTruthAnnotation,
    ImageRecord,
    OrganClass,
    RoiPrediction,
    SpeciesDistribution,
)
from organfusion.geometry import BoundingBox

LEAF, FLOWER, FRUIT, STEM, HDL = OrganClass


def box(x1, y1, x2, y2):
    return BoundingBox(float(x1), float(y1), float(x2), float(y2))


def det(x1, y1, x2, y2, conf, organ=LEAF, image_id="img"):
    return Detection(image_id, organ, box(x1, y1, x2, y2), conf)


def gt(x1, y1, x2, y2, organ=LEAF, image_id="img"):
    return GroundTruthAnnotation(image_id, organ, box(x1, y1, x2, y2))


def roi(probs, organ=LEAF, image_id="img", index=0):
    return RoiPrediction(image_id, index, organ, box(0, 0, 10, 10), SpeciesDistribution(probs))


def manifest(images, annotations=(), species=("a", "b"), splits=None):
    """``images`` is a list of (image_id, species_label) or ImageRecord."""
    recs = [im if isinstance(im, ImageRecord) else ImageRecord(im[0], 100, 100, im[1]) for im in images]
    return DatasetManifest(tuple(species), tuple(recs), tuple(annotations), splits)


def random_boxes(rng, n, size=100.0):
    x1 = rng.uniform(0, size * 0.8, n)
    y1 = rng.uniform(0, size * 0.8, n)
    w = rng.uniform(1, size * 0.5, n)
    h = rng.uniform(1, size * 0.5, n)
    return [box(a, b, min(a + c, size), min(b + d, size)) for a, b, c, d in zip(x1, y1, w, h)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
