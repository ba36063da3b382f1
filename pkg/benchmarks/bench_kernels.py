"""Benchmark the compiled kernel backend against the numpy fallback.

Usage:
    python benchmarks/bench_kernels.py              # quick sizes
    python benchmarks/bench_kernels.py --full       # dataset-scale sizes

The timings cover the kernels that dominate batch runs: binary morphology
with the viewer-prep disk, connected-component labeling, and the separable
convolution behind the Gaussian blur and windowed variance.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from srprom._kernels import available_backends
from srprom.model import StructuringElement
from srprom.raster import gaussian_kernel, reflect_indices


def timeit(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--full", action="store_true", help="dataset-scale sizes")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    if args.full:
        h, w, disk, sigma = 1024, 768, 64, 33.0
    else:
        h, w, disk, sigma = 384, 256, 32, 9.0

    rng = np.random.default_rng(0)
    mask = rng.random((h, w)) > 0.8
    field = rng.random((h, w))
    se = StructuringElement.disk(disk)
    dy = np.ascontiguousarray(se.offsets[:, 0])
    dx = np.ascontiguousarray(se.offsets[:, 1])
    kernel = gaussian_kernel(sigma)
    radius = (kernel.size - 1) // 2
    iy = reflect_indices(h, radius)
    ix = reflect_indices(w, radius)
    padded = np.ascontiguousarray(field[np.ix_(iy, ix)])

    backends = available_backends()
    print(f"mask {w}x{h}, disk({disk}) = {len(dy)} offsets, "
          f"gaussian sigma={sigma} ({kernel.size} taps), best of {args.repeat}")
    header = f"{'kernel':<22}" + "".join(f"{name:>12}" for name in backends)
    print(header)
    print("-" * len(header))

    cases = {
        "binary_erode": lambda b: b.binary_erode(mask, dy, dx),
        "binary_dilate": lambda b: b.binary_dilate(mask, dy, dx),
        "label_components": lambda b: b.label_components(mask),
        "convolve_sep_valid": lambda b: b.convolve_sep_valid(padded, kernel),
    }
    results: dict[str, dict[str, float]] = {}
    for name, case in cases.items():
        results[name] = {}
        row = f"{name:<22}"
        for backend_name, backend in backends.items():
            seconds = timeit(lambda: case(backend), args.repeat)
            results[name][backend_name] = seconds
            row += f"{seconds * 1e3:>10.1f}ms"
        print(row)

    if {"numpy", "cython"} <= backends.keys():
        print()
        for name, times in results.items():
            speedup = times["numpy"] / times["cython"]
            print(f"{name}: compiled is {speedup:.1f}x the numpy fallback")

    # sanity: identical outputs across backends
    if {"numpy", "cython"} <= backends.keys():
        np_b, cy_b = backends["numpy"], backends["cython"]
        assert (np_b.binary_erode(mask, dy, dx) == cy_b.binary_erode(mask, dy, dx)).all()
        assert (np_b.binary_dilate(mask, dy, dx) == cy_b.binary_dilate(mask, dy, dx)).all()
        assert np_b.label_components(mask)[1] == cy_b.label_components(mask)[1]
        print("\nbackend outputs agree")


if __name__ == "__main__":
    main()
