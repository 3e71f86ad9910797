import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("CORA_NO_EXTENSION"):
    try:
        from Cython.Build import cythonize
    except ImportError:  # fall back to the numpy kernels
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [Extension("cora._ckernels", ["src/cora/_ckernels.pyx"],
                       include_dirs=[np.get_include()],
                       define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
