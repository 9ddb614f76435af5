"""Build script: compiles the optional table-synthesis extension.

The package is pure Python plus one Cython extension for the hot kernels
(fluidport._kernels).  The extension is marked optional: if no C compiler
is available the install still succeeds and fluidport.kernels falls back
to its NumPy implementation at import time.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "fluidport._kernels",
                sources=["src/fluidport/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
