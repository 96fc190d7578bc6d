# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled detection kernels. Must agree bit-for-bit with ``_pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "cython"


cdef inline double _iou(const double[:, ::1] a, Py_ssize_t i,
                        const double[:, ::1] b, Py_ssize_t j) noexcept nogil:
    cdef double w, h, inter, area_a, area_b
    w = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
    h = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
    if w <= 0.0 or h <= 0.0:
        return 0.0
    inter = w * h
    area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
    area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
    return inter / (area_a + area_b - inter)


def iou_matrix(a, b):
    cdef const double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    cdef const double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    with nogil:
        for i in range(n):
            for j in range(m):
                ov[i, j] = _iou(av, i, bv, j)
    return out


def nms_keep(boxes, double threshold):
    """Greedy suppression over boxes already sorted by descending confidence."""
    cdef const double[:, ::1] bv = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = bv.shape[0], i, k, n_kept = 0
    keep = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] kv = keep
    cdef bint ok
    with nogil:
        for i in range(n):
            ok = True
            for k in range(n_kept):
                if _iou(bv, i, bv, kv[k]) > threshold:
                    ok = False
                    break
            if ok:
                kv[n_kept] = i
                n_kept += 1
    return keep[:n_kept].copy()


def greedy_match(ious, thresholds):
    """Match sorted detections (rows) to ground truths (columns) per threshold.

    Returns an int64 array of shape (T, D) holding the matched ground-truth
    column or -1. Each detection takes the unmatched ground truth of highest
    IoU at or above the threshold; IoU ties go to the lowest column.
    """
    cdef const double[:, ::1] iv = np.ascontiguousarray(ious, dtype=np.float64)
    cdef const double[::1] tv = np.ascontiguousarray(thresholds, dtype=np.float64).reshape(-1)
    cdef Py_ssize_t n_det = iv.shape[0], n_gt = iv.shape[1], n_thr = tv.shape[0]
    cdef Py_ssize_t t, d, g, best
    cdef double best_iou, v
    out = np.full((n_thr, n_det), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] ov = out
    taken_arr = np.zeros(max(n_gt, 1), dtype=np.uint8)
    cdef cnp.uint8_t[::1] taken = taken_arr
    with nogil:
        for t in range(n_thr):
            for g in range(n_gt):
                taken[g] = 0
            for d in range(n_det):
                best = -1
                best_iou = -1.0
                for g in range(n_gt):
                    if taken[g]:
                        continue
                    v = iv[d, g]
                    if v >= tv[t] and v > best_iou:
                        best = g
                        best_iou = v
                if best >= 0:
                    taken[best] = 1
                    ov[t, d] = best
    return out


def interpolated_precision(tp, Py_ssize_t n_gt):
    """101-point interpolated precision for a confidence-sorted TP/FP sequence.

    Entry k is the maximum precision over curve points whose recall is at
    least k/100, or 0 when no point reaches that recall.
    """
    cdef const cnp.uint8_t[::1] tv = np.ascontiguousarray(tp, dtype=np.uint8).reshape(-1)
    cdef Py_ssize_t n = tv.shape[0], i, k
    out = np.zeros(101, dtype=np.float64)
    cdef double[::1] ov = out
    if n == 0:
        return out
    env_arr = np.empty(n, dtype=np.float64)
    rec_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] env = env_arr
    cdef double[::1] rec = rec_arr
    cdef Py_ssize_t hits = 0
    cdef double r
    with nogil:
        for i in range(n):
            hits += tv[i]
            rec[i] = <double>hits / <double>n_gt
            env[i] = <double>hits / <double>(i + 1)
        # running max from the right turns precision into its upper envelope
        for i in range(n - 2, -1, -1):
            if env[i + 1] > env[i]:
                env[i] = env[i + 1]
        i = 0
        for k in range(101):
            r = k / 100.0
            while i < n and rec[i] < r:
                i += 1
            if i == n:
                break
            ov[k] = env[i]
    return out
