"""Build script for the optional compiled kernel extension.

The package works without the extension (a numpy fallback is selected at
import time); the extension only speeds up the fused elementwise kernels.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "modreason.autodiff._ckernels",
                ["src/modreason/autodiff/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

for ext in extensions:
    ext.optional = True  # fall back to the pure-numpy kernels if the build fails

setup(ext_modules=extensions)
