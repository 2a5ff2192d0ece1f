import os

from setuptools import setup

# The compiled kernel core is optional: when Cython (or a C compiler) is not
# available the package falls back to the pure-Python kernels at import time.
ext_modules = []
if os.environ.get("MLPMINE_PURE_BUILD", "") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "mlpmine._kernels_c",
                    sources=["src/mlpmine/_kernels_c.pyx"],
                    extra_compile_args=[
                        "-O3",
                        "-march=native",
                        # keep multiply/add unfused so results stay bit-identical
                        # to the pure-Python kernels
                        "-ffp-contract=off",
                        "-fopenmp",
                    ],
                    extra_link_args=["-fopenmp"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        print("Cython not found, building without the compiled kernel core")

setup(ext_modules=ext_modules)
