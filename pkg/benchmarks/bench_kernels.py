"""Compare the compiled histogram kernel against the numpy fallback.

Times ``hist_accumulate`` on both backends over a range of input shapes,
checks that the outputs are bit-identical, and optionally times a full
``train_gbt`` run per backend in a subprocess (the trainer binds its
kernel at import, so the end-to-end comparison needs a fresh
interpreter with TIERLAB_KERNEL set).

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 50 --no-train
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from tierlab._kernels.hist_py import hist_accumulate as hist_py

try:
    from tierlab._kernels._hist import hist_accumulate as hist_cy
except ImportError:
    hist_cy = None

# (n_examples, n_features, n_bins, node fraction): root-node sized calls
# down to the small deep-node calls that dominate later boosting rounds.
SHAPES = [
    (20_000, 13, 64, 1.0),
    (20_000, 13, 64, 0.25),
    (20_000, 13, 64, 0.05),
    (5_000, 13, 64, 1.0),
    (5_000, 32, 255, 1.0),
    (500, 13, 64, 1.0),
]

TRAIN_SNIPPET = """
import time
import numpy as np
from tierlab._kernels import BACKEND
from tierlab.gbt import GbtParams, train_gbt
from tierlab.labels import NUMERIC_FEATURES, FeatureVector, TrainingExample

rng = np.random.default_rng(99)
examples = []
for i, cat in enumerate(rng.integers(0, 15, 8000)):
    numeric = [0.0] * len(NUMERIC_FEATURES)
    numeric[0] = float(cat)
    numeric[2] = float(rng.integers(1, 64))
    examples.append(TrainingExample(FeatureVector(tuple(numeric), (f"sig{cat}",)),
                                    m=0.0, n=0.0, category=int(cat), job_id=f"e{i}"))
start = time.perf_counter()
model = train_gbt(examples, GbtParams(max_trees=60), n_categories=15)
elapsed = time.perf_counter() - start
print(f"{BACKEND} {elapsed:.3f} {model.info()['valid_accuracy']:.6f}")
"""


def make_inputs(rng, n_examples, n_features, n_bins, fraction):
    codes = rng.integers(0, n_bins, size=(n_examples, n_features), dtype=np.uint8)
    codes = np.ascontiguousarray(codes)
    n_rows = max(1, int(n_examples * fraction))
    rows = rng.choice(n_examples, size=n_rows, replace=False).astype(np.int32)
    grad = rng.normal(size=n_examples)
    hess = rng.random(n_examples)
    return codes, rows, grad, hess


def time_kernel(fn, args, n_bins, repeats):
    fn(*args, n_bins)  # warm up
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn(*args, n_bins)
        best = min(best, time.perf_counter() - start)
    return best, out


def identical(a, b):
    return all(x.dtype == y.dtype and np.array_equal(x, y) for x, y in zip(a, b))


def bench_kernels(repeats):
    rng = np.random.default_rng(7)
    print(f"{'examples':>9} {'feat':>5} {'bins':>5} {'rows':>7}"
          f" {'numpy':>10} {'compiled':>10} {'speedup':>8}  identical")
    for n_examples, n_features, n_bins, fraction in SHAPES:
        args = make_inputs(rng, n_examples, n_features, n_bins, fraction)
        t_py, out_py = time_kernel(hist_py, args, n_bins, repeats)
        t_cy, out_cy = time_kernel(hist_cy, args, n_bins, repeats)
        same = identical(out_py, out_cy)
        print(f"{n_examples:>9} {n_features:>5} {n_bins:>5} {len(args[1]):>7}"
              f" {t_py * 1e3:>8.3f}ms {t_cy * 1e3:>8.3f}ms {t_py / t_cy:>7.1f}x"
              f"  {same}")
        assert same, "backends disagree; do not trust the timings"


def bench_training():
    print("\nend-to-end train_gbt, 8,000 examples x 60 rounds (fresh"
          " interpreter per backend):")
    for backend in ("py", "cy"):
        env = dict(os.environ, TIERLAB_KERNEL=backend)
        out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env,
                             capture_output=True, text=True, check=True)
        used, elapsed, accuracy = out.stdout.split()
        assert used == backend
        print(f"  {backend}: {float(elapsed):>7.2f}s  valid accuracy {accuracy}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20,
                        help="timing repetitions per shape (best-of)")
    parser.add_argument("--no-train", action="store_true",
                        help="skip the end-to-end training comparison")
    opts = parser.parse_args(argv)
    if hist_cy is None:
        print("compiled kernel not built; nothing to compare"
              " (pip install -e . rebuilds it)")
        return 1
    bench_kernels(opts.repeats)
    if not opts.no_train:
        bench_training()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
