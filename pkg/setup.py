"""Build hook for the optional compiled DP kernel.

The package is fully functional without the extension: joinopt._core falls
back to the pure-Python kernel when the import fails. Compilation problems
therefore only cost speed, never correctness.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/joinopt/_core/_kernels.pyx",
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
        quiet=True,
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
        # -ffp-contract=off: the compiled kernel must match the pure-Python
        # twin bitwise, so fused multiply-adds are not allowed.
        ext.extra_compile_args.extend(["-O3", "-ffp-contract=off"])
except Exception:
    ext_modules = []

setup(ext_modules=ext_modules)
