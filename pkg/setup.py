"""Build the optional Cython kernel extension.

If Cython or a C compiler is unavailable the package still installs and the
numpy kernels are used instead.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("GENMEASURES_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "genmeasures.tensor._ckernels",
                    ["src/genmeasures/tensor/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
