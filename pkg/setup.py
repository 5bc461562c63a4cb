"""Build hook for the optional compiled kernels.

The package works without the extension (a numpy fallback is selected at
import time), so compilation failures are tolerated. Set GENLEARN_SKIP_EXT=1
to skip building the extension entirely.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("GENLEARN_SKIP_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext = Extension(
            "genlearn._kernels._cy",
            ["src/genlearn/_kernels/_cy.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            optional=True,
        )
        ext_modules = cythonize([ext], language_level="3")
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
