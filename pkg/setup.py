"""Build script for the optional compiled coordinate-descent kernel.

The package is pure Python apart from ``elglm._cd._cd_fast``. If Cython or a
C compiler is unavailable the extension is skipped and the pure-Python kernel
in ``elglm._cd._cd_py`` is used instead.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "elglm._cd._cd_fast",
                ["src/elglm/_cd/_cd_fast.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
