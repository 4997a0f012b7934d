import os

import numpy as np
from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to numpy when
# Cython is missing or EPGFLOW_NO_EXT is set.
ext_modules = []
if not os.environ.get("EPGFLOW_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "epgflow.linalg._kernels",
                    ["src/epgflow/linalg/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
