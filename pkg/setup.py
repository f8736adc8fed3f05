# Builds the optional Cython kernel extension. The package works without it
# (a NumPy reference implementation is selected at import time), so failures
# here degrade to a pure-Python install instead of aborting.
#
#   MVRML_SKIP_EXTENSION=1 pip install -e . --no-build-isolation   # skip build

import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


def _extensions():
    if os.environ.get("MVRML_SKIP_EXTENSION"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools.extension import Extension
    except ImportError:
        print("mvrml: Cython/numpy unavailable, building without the compiled "
              "kernels", file=sys.stderr)
        return []
    ext = Extension(
        "mvrml._kernels",
        sources=["src/mvrml/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-funroll-loops", "-march=native"],
    )
    return cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


class optional_build_ext(build_ext):
    """Fall back to the pure-Python package when compilation fails."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, headers missing, ...
            print(f"mvrml: extension build failed ({exc}); continuing with "
                  "the NumPy kernels", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"mvrml: building {ext.name} failed ({exc}); continuing "
                  "with the NumPy kernels", file=sys.stderr)


setup(ext_modules=_extensions(), cmdclass={"build_ext": optional_build_ext})
