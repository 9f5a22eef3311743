"""Build script for the optional compiled kernels.

The package works without them; ``incres_affect.kernels`` falls back to
numpy when ``_ckernels`` cannot be imported.
"""
from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    pass
else:
    ext_modules = cythonize(
        [
            Extension(
                "incres_affect._ckernels",
                ["src/incres_affect/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
