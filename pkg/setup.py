# Builds the optional compiled kernel backend.
# usage: pip install -e . --no-build-isolation
#
# The package works without the extension: srprom._kernels falls back to the
# numpy implementations when the compiled module is missing.

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "srprom._kernels._cykernels",
            sources=["src/srprom/_kernels/_cykernels.pyx"],
            include_dirs=[numpy.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})
except Exception as exc:  # pragma: no cover - depends on the build host
    print(f"srprom: compiled kernels skipped ({exc}); numpy fallback will be used")
    ext_modules = []

setup(ext_modules=ext_modules)
