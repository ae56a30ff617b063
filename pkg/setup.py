"""Build script for the optional compiled kernel.

The package is pure Python except for ``depaudit._speedups``, a small
Cython extension covering the two hot loops (version tokenization and
breadth-first depth search).  The extension is optional: if Cython or a
C compiler is unavailable the build proceeds and the package falls back
to the pure-Python kernels at import time.

Set DEPAUDIT_NO_EXT=1 to skip the extension build entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("DEPAUDIT_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "depaudit._speedups",
                    ["src/depaudit/_speedups.pyx"],
                    optional=True,
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
