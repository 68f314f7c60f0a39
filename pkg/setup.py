import sys

from setuptools import setup

# The gossip cascade kernel is optionally compiled with Cython. The package
# works without it (pure-Python fallback selected at import time), so a
# failed extension build must not break installation.
ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "addrscope.sim._gossip",
                ["src/addrscope/sim/_gossip.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover
    sys.stderr.write(f"addrscope: building without compiled kernel ({exc})\n")

setup(ext_modules=ext_modules)
