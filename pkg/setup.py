"""Build script for the compiled histogram kernels.

The extension is optional: if compilation fails the package falls back to
the numpy implementation in tierlab._kernels.hist_py at import time.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "tierlab._kernels._hist",
        sources=["src/tierlab/_kernels/_hist.pyx"],
        include_dirs=[np.get_include()],
        # -ffp-contract=off keeps float results bit-identical to the numpy
        # fallback (no FMA fusion), so both backends grow identical trees.
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
