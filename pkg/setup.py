import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -march=native is on by default (the extension is built where it runs);
# set HYHUP_NATIVE=0 for a portable build.
compile_args = ["-O3"]
if os.environ.get("HYHUP_NATIVE", "1") != "0":
    compile_args.append("-march=native")

extensions = [
    Extension(
        "hyhup._ckernels",
        ["src/hyhup/_ckernels.pyx"],
        include_dirs=[np.get_include(), "src/hyhup"],
        depends=["src/hyhup/_hyh_micro.h"],
        extra_compile_args=compile_args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # a failed compile leaves the pure-Python kernels in charge
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
)
