"""Pure-Python kernels, the fallback when the compiled core is unavailable.

Arithmetic is ordered exactly as in ``_ckernels.pyx`` so both backends give
identical floats.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def _iou(a, b) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0.0 or h <= 0.0:
        return 0.0
    inter = w * h
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def iou_matrix(a, b) -> np.ndarray:
    av = np.asarray(a, dtype=np.float64).reshape(-1, 4).tolist()
    bv = np.asarray(b, dtype=np.float64).reshape(-1, 4).tolist()
    out = np.zeros((len(av), len(bv)), dtype=np.float64)
    for i, ra in enumerate(av):
        for j, rb in enumerate(bv):
            out[i, j] = _iou(ra, rb)
    return out


def nms_keep(boxes, threshold: float) -> np.ndarray:
    bv = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).tolist()
    keep: list[int] = []
    for i, box in enumerate(bv):
        if all(_iou(box, bv[k]) <= threshold for k in keep):
            keep.append(i)
    return np.asarray(keep, dtype=np.int64)


def greedy_match(ious, thresholds) -> np.ndarray:
    iv = np.asarray(ious, dtype=np.float64)
    n_det, n_gt = iv.shape
    rows = iv.tolist()
    thrs = np.asarray(thresholds, dtype=np.float64).reshape(-1).tolist()
    out = np.full((len(thrs), n_det), -1, dtype=np.int64)
    for t, thr in enumerate(thrs):
        taken = [False] * n_gt
        for d, row in enumerate(rows):
            best, best_iou = -1, -1.0
            for g, v in enumerate(row):
                if not taken[g] and v >= thr and v > best_iou:
                    best, best_iou = g, v
            if best >= 0:
                taken[best] = True
                out[t, d] = best
    return out


def interpolated_precision(tp, n_gt: int) -> np.ndarray:
    flags = np.asarray(tp, dtype=np.uint8).reshape(-1).tolist()
    out = np.zeros(101, dtype=np.float64)
    n = len(flags)
    if n == 0:
        return out
    rec = [0.0] * n
    env = [0.0] * n
    hits = 0
    for i, f in enumerate(flags):
        hits += f
        rec[i] = hits / n_gt
        env[i] = hits / (i + 1)
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
        out[k] = env[i]
    return out
