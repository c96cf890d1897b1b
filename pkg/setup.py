import os
import sys

import numpy
from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to the pure-numpy
# implementation at import time if the extension is missing. Set
# SPECWAVE_NO_EXT=1 to skip compilation entirely.

ext_modules = []
if not os.environ.get("SPECWAVE_NO_EXT"):
    try:
        from Cython.Build import cythonize

        omp_args = [] if os.environ.get("SPECWAVE_NO_OPENMP") else ["-fopenmp"]
        ext_modules = cythonize(
            [
                Extension(
                    "specwave.kernels._core",
                    ["src/specwave/kernels/_core.pyx"],
                    extra_compile_args=["-O3"] + omp_args,
                    extra_link_args=omp_args,
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        print("Cython not available; building without compiled kernels", file=sys.stderr)

setup(ext_modules=ext_modules)
