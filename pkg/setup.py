"""Build script for the compiled forest kernels.

The extension is optional: set CAUSALSURV_NO_EXT=1 (or build without
Cython available) to install the pure-Python backend only.
"""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("CAUSALSURV_NO_EXT", "0") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover
        cythonize = None
    if cythonize is not None:
        kernels = Extension(
            "causalsurv.forest._kernels",
            ["src/causalsurv/forest/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            # keep IEEE semantics so both backends agree bit-for-bit on splits
            extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
        )
        ext_modules = cythonize(
            [kernels],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
                "nonecheck": False,
                "embedsignature": True,
            },
        )

setup(ext_modules=ext_modules)
