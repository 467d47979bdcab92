"""Build script for the optional compiled kernels.

The package works without the extension: ``warmflow._kernels`` falls back to
numpy implementations when the compiled module is absent or fails to import.
Build errors here are therefore reported but not fatal to an install.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "warmflow._kernels._native",
                ["src/warmflow/_kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
