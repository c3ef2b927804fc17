"""Build hook for the optional compiled split kernel.

Without Cython or a C compiler the package still installs and runs on the
pure-Python kernel.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("dbtune._core._split", ["src/dbtune/_core/_split.pyx"],
                   extra_compile_args=["-O3"], optional=True)],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
