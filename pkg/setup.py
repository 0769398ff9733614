import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the fallback kernels are used
    cythonize = None


def extensions():
    if cythonize is None or os.environ.get("COIN_AUDIT_NO_EXT"):
        return []
    ext = Extension(
        "coin_audit._merkle_ext",
        ["src/coin_audit/_merkle_ext.pyx"],
        include_dirs=[np.get_include()],
        libraries=["crypto"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
        optional=True,
    )
    return cythonize([ext], language_level=3, quiet=True)


setup(ext_modules=extensions())
