import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("SNAILS_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "snails._ckernel",
                ["src/snails/_ckernel.pyx"],
                include_dirs=[np.get_include()],
                library_dirs=[os.path.join(os.path.dirname(np.__file__), "random", "lib")],
                libraries=["npyrandom", "m"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # bit-for-bit agreement with the numpy fallback: no fast-math, no FMA contraction
                extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
