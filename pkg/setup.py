"""Build the optional compiled head kernel.

The extension is marked optional: when Cython or a C compiler is missing the
package installs anyway and ``keaf.backend`` falls back to the numpy kernel.
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "keaf._head_ext",
                ["src/keaf/_head_ext.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
