"""Build hooks for the optional compiled kernel.

The package is fully functional without the extension (a pure-Python
fallback is selected at import time). When Cython and a C compiler are
available, `python setup.py build_ext --inplace` or a normal pip install
compiles the hot kernels.
"""
from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/pulselut/_speedups.pyx",
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
