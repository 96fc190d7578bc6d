"""Time the compiled and pure-Python kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--boxes 400] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from organfusion.kernels import available_backends


def random_boxes(rng, n, size=1000.0):
    xy = rng.uniform(0, size * 0.9, (n, 2))
    wh = rng.uniform(5, size * 0.2, (n, 2))
    return np.hstack([xy, xy + wh])


def workloads(n, rng):
    a = random_boxes(rng, n)
    b = random_boxes(rng, n)
    ious = None
    tp = (rng.random(20 * n) < 0.4).astype(np.uint8)
    thresholds = np.round(0.5 + 0.05 * np.arange(10), 2)

    def cases(k):
        nonlocal ious
        ious = k.iou_matrix(a, b)
        return {
            "iou_matrix": lambda: k.iou_matrix(a, b),
            "nms_keep": lambda: k.nms_keep(a, 0.5),
            "greedy_match": lambda: k.greedy_match(ious, thresholds),
            "interpolated_precision": lambda: k.interpolated_precision(tp, int(tp.sum()) + 5),
        }

    return cases


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--boxes", type=int, default=400)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = available_backends()
    cases = workloads(args.boxes, np.random.default_rng(args.seed))
    timings = {}
    for name, module in backends.items():
        for kernel, fn in cases(module).items():
            number = 3 if name == "python" else 50
            best = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
            timings[(kernel, name)] = best

    names = list(backends)
    print(f"{'kernel':<24}" + "".join(f"{n + ' (ms)':>16}" for n in names) + ("    speedup" if len(names) > 1 else ""))
    for kernel in cases(backends[names[0]]):
        row = f"{kernel:<24}" + "".join(f"{1e3 * timings[(kernel, n)]:>16.3f}" for n in names)
        if "cython" in backends and "python" in backends:
            row += f"{timings[(kernel, 'python')] / timings[(kernel, 'cython')]:>10.1f}x"
        print(row)


if __name__ == "__main__":
    main()
