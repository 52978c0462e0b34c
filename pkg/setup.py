"""Build the optional compiled kernels; the package works without them."""
import numpy
from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.extension import Extension


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiled kernels not built ({exc}); using the numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: could not build {ext.name} ({exc}); using the numpy fallback")


try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("convhom._core", ["src/convhom/_core.pyx"],
                   include_dirs=[numpy.get_include()], extra_compile_args=["-O3"])],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
