from setuptools import find_packages
from setuptools import setup

from regime_hjm import __doc__
from regime_hjm import __version__


setup(
    name="regime-hjm",
    version=__version__,
    description=__doc__,
    license="WTFPL",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "Topic :: Office/Business :: Financial",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    python_requires=">=3.8",
    install_requires=[
        "numpy >= 1.20",
        "parse",
        "scipy >= 1.11",
        "sympy",
        "fields",
        "marshmallow >= 3.13",
    ],
    extras_require={"test": ["pytest"]},
    packages=find_packages(exclude=["tests"]),
    entry_points={
        "console_scripts": [
            "regime-hjm = regime_hjm.cli:main",
        ],
    },
)
