"""CMake-driven build of the _partseg extension module."""
import pathlib
import subprocess
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ROOT = pathlib.Path(__file__).parent.resolve()


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        # the module is emitted into the source package so editable installs
        # pick it up; regular wheels copy it to the staged extension path
        pkg = ROOT / "python" / "partseg"
        build_dir = ROOT / "build" / "python"
        build_dir.mkdir(parents=True, exist_ok=True)
        subprocess.run(
            ["cmake", "-S", str(ROOT), "-B", str(build_dir), "-G", "Ninja",
             "-DPARTSEG_BUILD_PYTHON=ON", "-DPARTSEG_BUILD_TESTS=OFF",
             f"-DPython_EXECUTABLE={sys.executable}",
             f"-DCMAKE_LIBRARY_OUTPUT_DIRECTORY={pkg}"],
            check=True)
        subprocess.run(["cmake", "--build", str(build_dir), "--target", "_partseg"], check=True)
        staged = pathlib.Path(self.get_ext_fullpath(ext.name)).resolve()
        staged.parent.mkdir(parents=True, exist_ok=True)
        built = sorted(pkg.glob("_partseg*.so"))[-1]
        if built != staged:
            self.copy_file(str(built), str(staged))


setup(
    ext_modules=[CMakeExtension("partseg._partseg")],
    cmdclass={"build_ext": CMakeBuild},
)
