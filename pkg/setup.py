from setuptools import Extension, setup

import numpy as np
from Cython.Build import cythonize

ext = Extension(
    "roadwatch._mog",
    sources=["src/roadwatch/_mog.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3"],
)

setup(ext_modules=cythonize([ext], language_level="3"))
