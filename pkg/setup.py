"""Build glue for the optional compiled integration kernel.

The package works without the extension (a pure-Python kernel is picked
up at import time); building it makes ensemble sweeps roughly two orders
of magnitude faster.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "ratetip._core",
        sources=["src/ratetip/_core.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext.optional = True
    ext_modules = cythonize([ext], language_level=3)
except ImportError:
    pass

setup(ext_modules=ext_modules)
