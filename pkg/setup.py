import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "fordn._accel._kernels",
                ["src/fordn/_accel/_kernels.pyx"],
                extra_compile_args=["-O3", "-fopenmp"],
                extra_link_args=["-fopenmp"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-Python fallback in fordn._accel is used when the extension is absent.
    ext_modules = []

setup(ext_modules=ext_modules)
