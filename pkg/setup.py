"""Build script. Compiles the optional C kernel extension.

Set ANNKIT_SKIP_EXT=1 to install without the compiled kernels; the package
then runs on the pure-numpy fallback.
"""

import os
import sys

from setuptools import setup

ext_modules = []
cmdclass = {}

if os.environ.get("ANNKIT_SKIP_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        machine_flags = ["-O3", "-ffast-math"]
        if os.environ.get("ANNKIT_PORTABLE") != "1":
            machine_flags.append("-march=native")
        ext_modules = cythonize(
            [
                Extension(
                    "annkit._kernels._ckernels",
                    ["src/annkit/_kernels/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=machine_flags,
                    # libm's linker script pulls in the vectorized libmvec
                    # variants that -ffast-math emits calls to
                    libraries=["m"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError as exc:
        sys.stderr.write(f"annkit: building without compiled kernels ({exc})\n")

setup(ext_modules=ext_modules, cmdclass=cmdclass)
