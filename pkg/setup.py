"""Build the optional compiled convolution kernels.

The package works without them (a numpy fallback is selected at import),
so a failed extension build degrades to an installable pure-Python wheel.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/treedec/numerics/_convops.pyx"],
        compiler_directives={"language_level": 3},
    )
    for m in ext_modules:
        m.include_dirs.append(numpy.get_include())
        m.extra_compile_args.append("-O3")
        m.define_macros.append(("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION"))
except ImportError:
    pass

setup(ext_modules=ext_modules)
