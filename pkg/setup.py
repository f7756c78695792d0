import os

from setuptools import find_packages, setup

install_requires = [
    "numpy>=1.22,<3",
    "scipy>=1.8,<2",
    "anyio>=3.0,<5",
]

console_scripts = [
    "volseg-cli=volseg.cli:volseg_cli",
]

tests_requires = [
    "pytest==8.3.4",
    "pytest-console-scripts==1.4.1",
    "pytest-cov==6.0.0",
]

dev_requires = [
    "black==25.1.0",
    "check-manifest>=0.42,<1",
    "flake8==7.1.2",
    "isort==6.0.1",
    "mypy==1.15",
    "sphinx>=7.0.0,<8;python_version<='3.9'",
    "sphinx>=8.1.0,<9;python_version>'3.9'",
    "sphinx_rtd_theme>=3.0.2,<4",
    "sphinx-argparse==0.5.2",
] + tests_requires

# Get version from __version__.py file
current_folder = os.path.abspath(os.path.dirname(__file__))
about = {}
with open(os.path.join(current_folder, "volseg", "__version__.py")) as f:
    exec(f.read(), about)

setup(
    name="volseg",
    version=about["__version__"],
    description="Volumetric segmentation kernels with reverse-mode differentiation",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Medical Science Apps.",
        "Topic :: Scientific/Engineering :: Image Processing",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Programming Language :: Python :: 3.13",
    ],
    keywords="segmentation 3d volumetric upsampling attention autograd",
    packages=find_packages(include=["volseg*"]),
    # PEP-561: https://www.python.org/dev/peps/pep-0561/
    package_data={"volseg": ["py.typed"]},
    python_requires=">=3.9",
    install_requires=install_requires,
    extras_require={
        "test": tests_requires,
        "dev": dev_requires,
    },
    include_package_data=True,
    zip_safe=False,
    platforms="any",
    entry_points={"console_scripts": console_scripts},
)
