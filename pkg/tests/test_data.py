import json

import numpy as np
import pytest

from organfusion.data import (
    OrganClass,
    SpeciesDistribution,
    load_detections,
    load_manifest,
    load_roi_predictions,
    load_splits,
    load_whole_image_predictions,
    manifest_to_dict,
    parse_manifest,
    write_detections,
    write_manifest,
    write_roi_predictions,
)
from organfusion.errors import InputFileError, ParseError, ValidationError


def minimal_doc():
    return {
        "species": ["Acer campestre", "Bellis perennis"],
        "images": [{"id": "img-1", "width": 640, "height": 480, "species": 1}],
        "annotations": [{"image_id": "img-1", "organ": "leaf", "bbox": [10, 20, 100, 50]}],
    }


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def write_lines(tmp_path, name, records):
    p = tmp_path / name
    p.write_text("".join(json.dumps(r) + "\n" for r in records))
    return p


def test_organ_parse_is_case_insensitive_and_canonical():
    assert OrganClass.parse("HDL") is OrganClass.HDL
    assert OrganClass.parse(" Leaf ") is OrganClass.LEAF
    assert str(OrganClass.FLOWER) == "flower"
    with pytest.raises(ValueError):
        OrganClass.parse("root")
    assert [o.category_id for o in OrganClass] == [1, 2, 3, 4, 5]
    assert OrganClass.from_category_id(5) is OrganClass.HDL


def test_load_minimal_manifest(tmp_path):
    m = load_manifest(write(tmp_path, "m.json", minimal_doc()))
    assert len(m.images) == 1
    assert m.annotations[0].box.as_tuple() == (10, 20, 110, 70)
    assert m.image("img-1").species_label == 1


def test_dangling_annotation_names_image(tmp_path):
    doc = minimal_doc()
    doc["annotations"].append({"image_id": "ghost", "organ": "leaf", "bbox": [0, 0, 1, 1]})
    with pytest.raises(ValidationError, match="ghost") as exc:
        load_manifest(write(tmp_path, "m.json", doc))
    assert "annotations[1]" in str(exc.value)


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d["images"][0].update(species=2), "outside vocabulary"),
        (lambda d: d["annotations"][0].update(bbox=[600, 0, 100, 10]), "outside image"),
        (lambda d: d["annotations"][0].update(bbox=[0, 0, 0, 10]), "degenerate"),
        (lambda d: d["annotations"][0].update(organ="root"), "unknown organ"),
        (lambda d: d["images"].append(dict(d["images"][0])), "duplicate image_id"),
        (lambda d: d.update(splits={"img-1": "holdout"}), "unknown split"),
        (lambda d: d.update(species=["a", "a"]), "duplicate species"),
    ],
)
def test_validation_errors(tmp_path, mutate, message):
    doc = minimal_doc()
    mutate(doc)
    with pytest.raises(ValidationError, match=message):
        load_manifest(write(tmp_path, "m.json", doc))


def test_parse_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_manifest(p)
    with pytest.raises(ParseError, match="bbox"):
        doc = minimal_doc()
        doc["annotations"][0]["bbox"] = [1, 2, 3]
        load_manifest(write(tmp_path, "m.json", doc))
    with pytest.raises(InputFileError):
        load_manifest(tmp_path / "missing.json")


def test_category_id_and_species_name_accepted():
    doc = minimal_doc()
    doc["images"][0]["species"] = "Acer campestre"
    doc["annotations"][0] = {"image_id": "img-1", "category_id": 2, "bbox": [0, 0, 5, 5]}
    m = parse_manifest(doc)
    assert m.image("img-1").species_label == 0
    assert m.annotations[0].organ is OrganClass.FLOWER


def test_table1_split_fixture_totals():
    counts = {"train": 62959, "test": 17995, "val": 9016}
    images, splits = [], {}
    k = 0
    for split, n in counts.items():
        for _ in range(n):
            images.append({"id": f"i{k}", "width": 10, "height": 10, "species": k % 3})
            splits[f"i{k}"] = split
            k += 1
    m = parse_manifest({"species": ["a", "b", "c"], "images": images, "splits": splits})
    tally = {s: sum(1 for v in m.split_assignments.values() if v == s) for s in counts}
    assert tally == counts


def test_manifest_round_trip(tmp_path):
    doc = minimal_doc()
    doc["images"][0]["source_query_id"] = "q-7"
    doc["splits"] = {"img-1": "test"}
    m = parse_manifest(doc)
    p = tmp_path / "out.json"
    write_manifest(m, p)
    assert load_manifest(p) == m
    assert parse_manifest(manifest_to_dict(m)) == m


def test_distribution_tolerance():
    d = SpeciesDistribution([0.5, 0.5000004])
    assert d.probabilities.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValidationError, match="sum"):
        SpeciesDistribution([0.5, 0.3])
    with pytest.raises(ValidationError, match="negative"):
        SpeciesDistribution([1.2, -0.2])
    assert SpeciesDistribution([0.2, 0.8]).argmax() == 1
    assert SpeciesDistribution([0.5, 0.5]).argmax() == 0


def roi_record(**kw):
    rec = {"image_id": "img-1", "roi_index": 0, "organ": "leaf", "bbox": [0, 0, 10, 10], "probs": [0.3, 0.7]}
    rec.update(kw)
    return rec


def test_roi_predictions_renormalized(tmp_path):
    p = write_lines(tmp_path, "r.jsonl", [roi_record(probs=[0.6, 0.4000004])])
    (r,) = load_roi_predictions(p)
    assert r.distribution.probabilities.sum() == pytest.approx(1.0, abs=1e-15)
    assert r.distribution.probabilities[0] < 0.6


@pytest.mark.parametrize(
    "record, message",
    [
        (roi_record(probs=[0.6, 0.2]), "sum"),
        (roi_record(probs=[1.1, -0.1]), "negative"),
        (roi_record(probs=[0.2, 0.3, 0.5]), "vocabulary"),
        (roi_record(image_id="ghost"), "unknown image_id"),
        (roi_record(bbox=[630, 0, 20, 20]), "outside image"),
    ],
)
def test_roi_prediction_errors(tmp_path, record, message):
    m = parse_manifest(minimal_doc())
    p = write_lines(tmp_path, "r.jsonl", [record])
    with pytest.raises(ValidationError, match=message):
        load_roi_predictions(p, m)


def test_duplicate_roi_rejected(tmp_path):
    p = write_lines(tmp_path, "r.jsonl", [roi_record(), roi_record()])
    with pytest.raises(ValidationError, match="duplicate"):
        load_roi_predictions(p)


def test_roi_round_trip(tmp_path):
    recs = [roi_record(), roi_record(roi_index=1, organ="HDL", probs=[0.9, 0.1], input_size=[224, 224])]
    rois = load_roi_predictions(write_lines(tmp_path, "r.jsonl", recs))
    out = tmp_path / "r2.jsonl"
    write_roi_predictions(rois, out)
    again = load_roi_predictions(out)
    assert again == rois
    assert again[1].input_size == (224, 224)


def test_detections_load_and_round_trip(tmp_path):
    recs = [
        {"image_id": "img-1", "organ": "flower", "bbox": [0, 0, 5, 5], "score": 0.9},
        {"image_id": "img-1", "category_id": 3, "bbox": [1, 1, 5, 5], "score": 1},
    ]
    dets = load_detections(write(tmp_path, "d.json", recs), parse_manifest(minimal_doc()))
    assert [d.organ for d in dets] == [OrganClass.FLOWER, OrganClass.FRUIT]
    out = tmp_path / "d2.json"
    write_detections(dets, out)
    assert load_detections(out) == dets


def test_detection_score_range(tmp_path):
    recs = [{"image_id": "img-1", "organ": "leaf", "bbox": [0, 0, 5, 5], "score": 1.5}]
    with pytest.raises(ValidationError, match="score"):
        load_detections(write(tmp_path, "d.json", recs))


def test_every_bad_record_is_located(tmp_path):
    recs = [roi_record(roi_index=i) for i in range(5)]
    recs[3]["probs"] = [0.1, 0.1]
    with pytest.raises(ValidationError) as exc:
        load_roi_predictions(write_lines(tmp_path, "r.jsonl", recs))
    assert "record 3" in str(exc.value)


def test_splits_and_whole_image_files(tmp_path):
    m = parse_manifest(minimal_doc())
    assert load_splits(write(tmp_path, "s.json", {"assignments": {"img-1": "val"}}), m) == {"img-1": "val"}
    with pytest.raises(ValidationError):
        load_splits(write(tmp_path, "s2.json", {"ghost": "val"}), m)
    w = load_whole_image_predictions(write_lines(tmp_path, "w.jsonl", [{"image_id": "img-1", "probs": [0.1, 0.9]}]), m)
    assert np.allclose(w["img-1"].probabilities, [0.1, 0.9])
