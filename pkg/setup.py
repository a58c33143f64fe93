"""Build script for the compiled kernel backend.

The package works without the extension (a pure-NumPy backend is selected at
import time), so a failed compile only costs speed. Build in place with

    python3 setup.py build_ext --inplace
"""

import os

from setuptools import setup
from setuptools.extension import Extension

PYX = "src/setmatch/backends/_ckern.pyx"

ext_modules = []
if os.path.exists(PYX):
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:  # pure-python install
        pass
    else:
        extensions = [
            Extension(
                "setmatch.backends._ckern",
                sources=[PYX],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[
                    ("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")
                ],
            )
        ]
        ext_modules = cythonize(
            extensions,
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )

setup(ext_modules=ext_modules)
