"""Build script for the optional compiled quadrature kernels.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so the extension is marked optional: a failed
compile degrades the install instead of breaking it.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext = Extension(
        "oscdamp._kernels._quadcore",
        sources=["src/oscdamp/_kernels/_quadcore.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
        optional=True,
    )
    ext_modules = cythonize([ext], language_level=3)
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
