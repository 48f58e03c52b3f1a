import os

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


class OptionalBuildExt(build_ext):
    """Skip the compiled kernels when no compiler is available; the package
    falls back to its numpy implementation at import."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            if os.environ.get("FLOWCAST_REQUIRE_EXT"):
                raise
            print(f"warning: compiled kernels not built ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            if os.environ.get("FLOWCAST_REQUIRE_EXT"):
                raise
            print(f"warning: failed to build {ext.name} ({exc})")


ext_modules = []
if cythonize is not None and not os.environ.get("FLOWCAST_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "flowcast._kernels",
                ["src/flowcast/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # no FMA contraction: drafts must match the Euler update bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
