"""Builds the optional compiled conv kernel. The package works without it
(numpy fallback is selected at import time), so a failed compile is not fatal."""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from setuptools import Extension
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "mtsmae.kernels._conv",
                ["src/mtsmae/kernels/_conv.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError as exc:
    print(f"cython/numpy unavailable ({exc}); building without compiled kernels",
          file=sys.stderr)

setup(ext_modules=ext_modules)
