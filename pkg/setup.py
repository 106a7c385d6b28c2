"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension: stbem.kernels falls
back to the NumPy implementation when stbem._kernels_cy is missing.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "stbem._kernels_cy",
                sources=["src/stbem/_kernels_cy.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
