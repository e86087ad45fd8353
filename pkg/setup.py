import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "kemeny1d._kernels",
                ["src/kemeny1d/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
                # the package works without the extension (pure fallback)
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
