import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

# The compiled kernel core is optional: bevdrive.kernels falls back to the
# pure-numpy implementations when the extension is absent.
extensions = [
    Extension(
        "bevdrive._ckernels",
        ["src/bevdrive/_ckernels.pyx"],
        extra_compile_args=["-O3", "-march=native"],
        include_dirs=[numpy.get_include()],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": 3,
        },
    )
)
