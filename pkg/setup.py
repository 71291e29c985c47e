from setuptools import setup, find_namespace_packages

setup(
    name="paxraft",
    version="0.1.0",
    packages=find_namespace_packages(include=['app*']),
    install_requires=[
        "pydantic>=2.0.0",
        "pyyaml>=6.0",
        "python-dotenv>=0.19.0",
        "structlog>=23.0.0",
        "prometheus-client>=0.17.0",
        "numpy>=1.26.0",
    ],
    extras_require={
        "test": [
            "pytest>=7.0.0",
            "pytest-cov>=4.0.0",
            "pytest-mock>=3.10.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "paxraft=app.cli:main",
        ],
    },
    python_requires=">=3.8",
    description="Raft-style Paxos and Raft with a deterministic simulator, safety checkers and a bounded explorer",
    long_description=open("README.md", encoding="utf-8").read(),
    long_description_content_type="text/markdown",
)
