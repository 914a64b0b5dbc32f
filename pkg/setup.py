"""
Setup script for qgpatch.
"""
from setuptools import setup, find_packages

setup(
    name="qgpatch",
    version="0.1.0",
    description="Spectral and bifurcation numerics for doubly connected rotating patches of the 3D quasi-geostrophic model",
    author="James Staud",
    author_email="james@example.com",
    package_dir={"": "src"},
    packages=find_packages(where="src"),
    install_requires=[
        "numpy>=1.24,<2",
        "scipy>=1.10,<2",
        "rich>=13.0,<14",
        "jsonschema>=4.17.3,<5"
    ],
    entry_points={
        "console_scripts": [
            "qgpatch=qgpatch.cli:main"
        ]
    },
    classifiers=[
        "Programming Language :: Python :: 3.10",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires='>=3.10',
)
