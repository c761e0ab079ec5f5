"""Pure-numpy histogram accumulation, the fallback backend.

Accumulation order matters: np.bincount adds weights sequentially in
input order, and the input here is laid out example-major, so per-bucket
partial sums are formed in exactly the same order as the compiled loop.
That keeps grown trees bit-identical across backends.
"""

from __future__ import annotations

import numpy as np


def hist_accumulate(codes, rows, grad, hess, n_bins):
    """Sum grad/hess/count per (feature, bin) over the given example rows.

    codes: uint8 (n_examples, n_features) C-contiguous bin codes.
    rows:  int32 example indices belonging to the tree node.
    Returns (g, h, cnt) with shape (n_features, n_bins).
    """
    n_features = codes.shape[1]
    sub = codes[rows].astype(np.int64)
    sub += np.arange(n_features, dtype=np.int64) * n_bins
    flat = sub.ravel()
    size = n_features * n_bins
    wg = np.repeat(grad[rows], n_features)
    wh = np.repeat(hess[rows], n_features)
    g = np.bincount(flat, weights=wg, minlength=size)[:size]
    h = np.bincount(flat, weights=wh, minlength=size)[:size]
    cnt = np.bincount(flat, minlength=size)[:size]
    return (
        g.reshape(n_features, n_bins),
        h.reshape(n_features, n_bins),
        cnt.reshape(n_features, n_bins).astype(np.int64),
    )
