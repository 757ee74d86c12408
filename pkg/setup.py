"""Build script for the optional compiled fusion kernel.

The package is fully functional without the extension (imusynth.fusion falls
back to the pure-Python loop); the extension only accelerates fuse_stream.
"""

import os

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    np = None
    cythonize = None

ext_modules = []
if cythonize is not None and os.path.exists("src/imusynth/_native.pyx"):
    ext_modules = cythonize(
        [
            Extension(
                "imusynth._native",
                sources=["src/imusynth/_native.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
