"""Build script for the optional Cython kernels.

The package works without them; ``pyrabow._native`` falls back to the
numpy implementations when the extension is missing.
"""
import os

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    setup()
else:
    extensions = [
        Extension(
            "pyrabow._native._core",
            [os.path.join("src", "pyrabow", "_native", "_core.pyx")],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
    ]
    setup(
        ext_modules=cythonize(
            extensions,
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    )
