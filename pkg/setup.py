from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "undertone.kernels._scan",
                ["src/undertone/kernels/_scan.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[
                    ("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")
                ],
            )
        ],
        language_level=3,
    )
except ImportError:
    # no Cython at build time: install anyway, the package selects the
    # numpy reference kernels at import
    extensions = []

setup(ext_modules=extensions)
