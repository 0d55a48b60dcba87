"""Builds the optional compiled kernel; the package falls back to numpy without it."""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("JUMPSWITCH_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("jumpswitch._kernel", ["src/jumpswitch/_kernel.pyx"],
                       include_dirs=["src/jumpswitch"],
                       extra_compile_args=["-O3", "-march=native", "-fno-trapping-math"])],
            language_level=3,
        )

setup(ext_modules=ext_modules)
