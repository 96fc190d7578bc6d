import numpy as np
import pytest

from organfusion import kernels
from organfusion.kernels import _pykernels

from conftest import random_boxes
from oracles import ref_ap_from_flags, ref_iou

BACKENDS = kernels.available_backends()


def _arr(bs):
    return np.array([b.as_tuple() for b in bs], dtype=np.float64).reshape(-1, 4)


def test_active_backend_is_listed():
    assert kernels.BACKEND in BACKENDS


def test_compiled_backend_built():
    # the package build compiles the extension; the fallback still exists
    assert "python" in BACKENDS
    if "cython" not in BACKENDS:
        pytest.skip("compiled kernels not built in this environment")
    assert kernels.BACKEND == "cython"


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_iou_matrix_matches_reference(name, rng):
    k = BACKENDS[name]
    a, b = random_boxes(rng, 7), random_boxes(rng, 5)
    m = k.iou_matrix(_arr(a), _arr(b))
    for i in range(7):
        for j in range(5):
            assert m[i, j] == pytest.approx(ref_iou(a[i].as_tuple(), b[j].as_tuple()), abs=1e-15)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_empty_inputs(name):
    k = BACKENDS[name]
    assert k.iou_matrix(np.zeros((0, 4)), np.zeros((3, 4))).shape == (0, 3)
    assert k.nms_keep(np.zeros((0, 4)), 0.5).tolist() == []
    assert k.greedy_match(np.zeros((2, 0)), np.array([0.5])).tolist() == [[-1, -1]]
    assert k.interpolated_precision(np.zeros(0, dtype=np.uint8), 3).tolist() == [0.0] * 101


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_interpolated_precision_matches_definition(name, rng):
    k = BACKENDS[name]
    for _ in range(200):
        n = int(rng.integers(1, 12))
        flags = (rng.random(n) < 0.5).astype(np.uint8)
        n_gt = int(flags.sum() + rng.integers(0, 3)) or 1
        got = k.interpolated_precision(flags, n_gt).sum() / 101
        assert got == pytest.approx(ref_ap_from_flags(flags.tolist(), n_gt), abs=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_greedy_match_prefers_highest_iou_then_lowest_index(name):
    k = BACKENDS[name]
    ious = np.array([[0.6, 0.9, 0.9], [0.95, 0.2, 0.0]])
    assert k.greedy_match(ious, np.array([0.5, 0.92])).tolist() == [[1, 0], [-1, 0]]


def test_backends_agree_bit_for_bit(rng):
    if len(BACKENDS) < 2:
        pytest.skip("only one backend available")
    c, p = BACKENDS["cython"], _pykernels
    thresholds = np.round(np.arange(0.5, 0.96, 0.05), 2)
    for _ in range(300):
        a = _arr(random_boxes(rng, int(rng.integers(0, 9))))
        b = _arr(random_boxes(rng, int(rng.integers(0, 9))))
        m1, m2 = c.iou_matrix(a, b), p.iou_matrix(a, b)
        assert np.array_equal(m1, m2)
        assert np.array_equal(c.greedy_match(m1, thresholds), p.greedy_match(m1, thresholds))
        for thr in (0.1, 0.5):
            assert np.array_equal(c.nms_keep(a, thr), p.nms_keep(a, thr))
        flags = (rng.random(len(a)) < 0.4).astype(np.uint8)
        n_gt = int(flags.sum()) + 1
        assert np.array_equal(c.interpolated_precision(flags, n_gt), p.interpolated_precision(flags, n_gt))
