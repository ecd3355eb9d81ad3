import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("BINSIM_PURE_PYTHON", "") != "1":
    import numpy as np

    ext_modules = cythonize(
        [
            Extension(
                "binsim._kernels._ckernels",
                ["src/binsim/_kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                # keep IEEE semantics so results match the Python fallback bit for bit
                extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
