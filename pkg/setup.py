from setuptools import setup, find_packages

setup(
    name="recps",
    version="0.1",
    packages=find_packages(exclude=["tests", "tests.*"]),
    python_requires=">=3.10",
    install_requires=[
        "click>=8.1",
        "numpy>=2.0",
        "pandas>=2.0",
        "pydantic>=2.0",
        "python-dotenv>=1.0",
        "PyYAML>=6.0",
        "scipy>=1.11",
        "tabulate>=0.9",
    ],
    entry_points={"console_scripts": ["recps=recps.main:cli"]},
)
