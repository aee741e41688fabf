"""Compare the compiled and numpy mixture-update kernels.

Run:  python3 benchmarks/bench_mog.py [--frames N] [--size HxW]
"""

import argparse
import time

import numpy as np

from roadwatch.background import (BG_RATIO, K_COMPONENTS, MATCH_SIGMA, VAR_FLOOR,
                                  VAR_INIT, kernel_for)


def bench(backend: str, frames: np.ndarray, alpha: float = 0.01) -> float:
    kernel = kernel_for(backend)
    n, h, w = frames.shape
    weights = np.zeros((h, w, K_COMPONENTS), np.float32)
    means = np.zeros((h, w, K_COMPONENTS), np.float32)
    variances = np.full((h, w, K_COMPONENTS), VAR_INIT, np.float32)
    fg = np.zeros((h, w), np.uint8)
    t0 = time.perf_counter()
    for i in range(n):
        kernel(weights, means, variances, frames[i], alpha, VAR_FLOOR,
               BG_RATIO, MATCH_SIGMA ** 2, VAR_INIT, fg)
    elapsed = time.perf_counter() - t0
    return elapsed / (n * h * w) * 1e9  # ns per pixel


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--frames", type=int, default=60)
    ap.add_argument("--size", default="270x480")
    args = ap.parse_args()
    h, w = (int(v) for v in args.size.split("x"))
    rng = np.random.default_rng(0)
    base = rng.integers(0, 200, size=(h, w), dtype=np.uint8)
    frames = np.stack([np.clip(base.astype(np.int16)
                               + rng.normal(0, 3, (h, w)).astype(np.int16),
                               0, 255).astype(np.uint8)
                       for _ in range(args.frames)])
    for backend in ("native", "numpy"):
        try:
            ns = bench(backend, frames)
        except ImportError as exc:
            print(f"{backend:>6}: unavailable ({exc})")
            continue
        print(f"{backend:>6}: {ns:8.2f} ns/pixel "
              f"({ns * h * w / 1e6:6.2f} ms per {h}x{w} frame)")


if __name__ == "__main__":
    main()
