"""Builds the optional compiled kernel extension.

The package works without it (a numpy fallback is selected at import time);
the extension just makes the hot distance kernels fast. Build in place with:

    python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "pipegraph._kernels._core",
                sources=["src/pipegraph/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython available: install pure-Python, the fallback kernels take over.
    pass

setup(ext_modules=ext_modules)
