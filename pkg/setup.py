from setuptools import find_packages, setup

setup(
    name="dfsim",
    version="1.0.0",
    packages=find_packages(exclude=["tests"]),
    install_requires=[
        "Click",
        "gitpython",
        "python-slugify",
        "tabulate",
        "numpy",
        "scipy",
        "networkx",
        "matplotlib",
        "pydantic>=2",
    ],
    extras_require={"test": ["pytest"]},
    entry_points="""
        [console_scripts]
        dfsim=cli:cli
    """,
)
