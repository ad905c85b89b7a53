"""Builds the optional compiled kernel extension.

The package works without it (numpy fallback); install still succeeds if
Cython or a C compiler is missing.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension
    import numpy as np

    ext_modules = cythonize(
        [
            Extension(
                "distcond._kernels_c",
                ["src/distcond/_kernels_c.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
