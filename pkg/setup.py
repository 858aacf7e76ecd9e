"""Build hook for the optional compiled kernel extension.

Set GCOTDC_SKIP_EXT=1 to install without the extension; the package then
falls back to the pure-numpy kernels at import time.
"""
import os

from setuptools import Extension, setup

if os.environ.get("GCOTDC_SKIP_EXT") == "1":
    ext_modules = []
else:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "gcotdc._kernels._core",
                ["src/gcotdc/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
