"""Build the compiled simulation core.

``_simcore.py`` is valid Python and Cython pure-Python mode at once; it is
compiled to ``gpuiso._simcore_c`` and shipped next to the source, which
``gpuiso.sim`` falls back to when the extension is missing. Set
``GPUISO_NO_EXT=1`` to skip compilation.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("GPUISO_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("Cython not found; installing the pure-Python simulation core only")
    else:
        ext_modules = cythonize(
            [Extension("gpuiso._simcore_c", ["src/gpuiso/_simcore.py"])],
            compiler_directives={
                "language_level": 3,
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )

setup(ext_modules=ext_modules)
