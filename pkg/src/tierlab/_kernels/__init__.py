"""Histogram kernel backend selection.

The compiled extension is used when available; set TIERLAB_KERNEL=py to
force the numpy fallback or TIERLAB_KERNEL=cy to require the extension
(import error if it was not built). Both backends return bit-identical
histograms, so trained models do not depend on the choice.
"""

from __future__ import annotations

import os

_choice = os.environ.get("TIERLAB_KERNEL", "").strip().lower()

if _choice not in ("", "py", "cy"):
    raise ImportError(f"TIERLAB_KERNEL must be 'py' or 'cy', got {_choice!r}")

if _choice == "py":
    from tierlab._kernels.hist_py import hist_accumulate

    BACKEND = "py"
elif _choice == "cy":
    from tierlab._kernels._hist import hist_accumulate

    BACKEND = "cy"
else:
    try:
        from tierlab._kernels._hist import hist_accumulate

        BACKEND = "cy"
    except ImportError:
        from tierlab._kernels.hist_py import hist_accumulate

        BACKEND = "py"

__all__ = ["BACKEND", "hist_accumulate"]
