"""Benchmark the numba kernels against their pure-numpy fallbacks.

The DSRF_NUMBA env var is read at import time, so this script re-runs itself
in a subprocess per mode and prints a comparison table:

    python3 benchmarks/bench_accel.py [--size 512] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def run_child(size, repeat):
    import numpy as np

    from dronesr.accel import NUMBA_ENABLED
    from dronesr.features import SiftParams, detect_and_describe
    from dronesr.geometry import Homography, warp_image
    from dronesr.synth import multiscale_texture

    rng = np.random.default_rng(0)
    img = multiscale_texture(size, size, rng)
    gray = multiscale_texture(size, size, rng, channels=1)
    h = Homography(np.array([[1.001, 2e-3, 1.7], [-2e-3, 0.999, -0.8],
                             [1e-7, -1e-7, 1.0]]))
    results = {"mode": "numba" if NUMBA_ENABLED else "numpy"}

    def _timed(fn):
        t0 = time.perf_counter()
        fn()
        return time.perf_counter() - t0

    def bench(name, fn):
        fn()  # warm-up (also triggers JIT compilation under numba)
        results[name] = min(_timed(fn) for _ in range(repeat))

    bench("sift_detect_describe",
          lambda: detect_and_describe(gray, SiftParams(max_keypoints=2000)))
    bench("warp_bilinear", lambda: warp_image(img, h, size, size))
    print(json.dumps(results))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if os.environ.get("DSRF_BENCH_CHILD"):
        run_child(args.size, args.repeat)
        return
    rows = {}
    for flag in ("1", "0"):
        env = dict(os.environ, DSRF_NUMBA=flag, DSRF_BENCH_CHILD="1")
        out = subprocess.run([sys.executable, __file__, "--size", str(args.size),
                              "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        rec = json.loads(out.stdout.strip().splitlines()[-1])
        rows[rec.pop("mode")] = rec
    kernels = sorted(rows["numba"])
    print(f"{'kernel':<24}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    for k in kernels:
        a, b = rows["numba"][k], rows["numpy"][k]
        print(f"{k:<24}{a:>12.4f}{b:>12.4f}{b / a:>10.2f}x")


if __name__ == "__main__":
    main()
