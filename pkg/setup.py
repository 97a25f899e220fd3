"""Build script for the optional compiled convolution kernels.

The package works without the extension (a NumPy fallback is selected at
import time), so failures here should be loud but are not fatal to users
who install with ``--no-build-isolation`` on exotic platforms.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "fcanet._ckernels",
        ["src/fcanet/_ckernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
