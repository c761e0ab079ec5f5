"""Histogram kernel backends: correctness, bit-identity, and the
TIERLAB_KERNEL selection switch."""

import os
import subprocess
import sys

import numpy as np
import pytest

from tierlab._kernels import BACKEND, hist_accumulate
from tierlab._kernels.hist_py import hist_accumulate as hist_py_accumulate

compiled = pytest.importorskip("tierlab._kernels._hist",
                               reason="compiled kernel not built")


def random_inputs(seed, n_examples=500, n_features=7, n_bins=32):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, n_bins, size=(n_examples, n_features), dtype=np.uint8)
    codes = np.ascontiguousarray(codes)
    rows = rng.choice(n_examples, size=n_examples // 3, replace=False).astype(np.int32)
    grad = rng.normal(size=n_examples)
    hess = rng.random(n_examples)
    return codes, rows, grad, hess, n_bins


def reference_accumulate(codes, rows, grad, hess, n_bins):
    # deliberately naive: one python loop, nothing shared with either backend
    n_features = codes.shape[1]
    g = np.zeros((n_features, n_bins))
    h = np.zeros((n_features, n_bins))
    cnt = np.zeros((n_features, n_bins), dtype=np.int64)
    for r in rows:
        for f in range(n_features):
            b = codes[r, f]
            g[f, b] += grad[r]
            h[f, b] += hess[r]
            cnt[f, b] += 1
    return g, h, cnt


def test_default_backend_prefers_the_extension():
    assert BACKEND == "cy"
    assert hist_accumulate is compiled.hist_accumulate


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_python_kernel_matches_naive_reference(seed):
    codes, rows, grad, hess, n_bins = random_inputs(seed)
    g, h, cnt = hist_py_accumulate(codes, rows, grad, hess, n_bins)
    rg, rh, rcnt = reference_accumulate(codes, rows, grad, hess, n_bins)
    assert np.allclose(g, rg) and np.allclose(h, rh)
    assert np.array_equal(cnt, rcnt)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_backends_are_bit_identical(seed):
    codes, rows, grad, hess, n_bins = random_inputs(seed)
    py = hist_py_accumulate(codes, rows, grad, hess, n_bins)
    cy = compiled.hist_accumulate(codes, rows, grad, hess, n_bins)
    for a, b in zip(py, cy):
        assert np.array_equal(a, b)  # exact, not approximate


def test_empty_row_set():
    codes, _, grad, hess, n_bins = random_inputs(7)
    rows = np.array([], dtype=np.int32)
    for fn in (hist_py_accumulate, compiled.hist_accumulate):
        g, h, cnt = fn(codes, rows, grad, hess, n_bins)
        assert g.shape == (codes.shape[1], n_bins)
        assert not g.any() and not h.any() and not cnt.any()


def backend_in_subprocess(value):
    env = dict(os.environ)
    if value is None:
        env.pop("TIERLAB_KERNEL", None)
    else:
        env["TIERLAB_KERNEL"] = value
    proc = subprocess.run(
        [sys.executable, "-c", "from tierlab._kernels import BACKEND; print(BACKEND)"],
        capture_output=True, text=True, env=env,
    )
    return proc


def test_kernel_env_switch_selects_backend():
    assert backend_in_subprocess("py").stdout.strip() == "py"
    assert backend_in_subprocess("cy").stdout.strip() == "cy"
    assert backend_in_subprocess(None).stdout.strip() == "cy"


def test_kernel_env_rejects_unknown_value():
    proc = backend_in_subprocess("fortran")
    assert proc.returncode != 0
    assert "TIERLAB_KERNEL" in proc.stderr


def test_trained_model_is_backend_independent():
    """End to end: the same training run under both backends, same trees."""
    script = (
        "import numpy as np\n"
        "from tierlab.gbt import GbtParams, train_gbt\n"
        "from tierlab.labels import NUMERIC_FEATURES, FeatureVector, TrainingExample\n"
        "rng = np.random.default_rng(0)\n"
        "train = []\n"
        "for x in rng.random(300):\n"
        "    numeric = [0.0] * len(NUMERIC_FEATURES)\n"
        "    numeric[0] = float(x)\n"
        "    fv = FeatureVector(tuple(numeric), ())\n"
        "    train.append(TrainingExample(fv, 0.0, 0.0, int(x >= 0.5), 'e'))\n"
        "params = GbtParams(max_trees=25, max_depth=3, histogram_bins=32)\n"
        "model = train_gbt(train, params)\n"
        "print(model.to_json())\n"
    )
    outputs = {}
    for backend in ("py", "cy"):
        env = dict(os.environ, TIERLAB_KERNEL=backend)
        proc = subprocess.run([sys.executable, "-c", script],
                              capture_output=True, text=True, env=env)
        assert proc.returncode == 0, proc.stderr
        outputs[backend] = proc.stdout
    py_json = outputs["py"].replace('"kernel_backend": "py"', '"kernel_backend": "X"')
    cy_json = outputs["cy"].replace('"kernel_backend": "cy"', '"kernel_backend": "X"')
    assert py_json == cy_json
