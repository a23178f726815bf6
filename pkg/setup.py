from setuptools import setup, find_packages

with open("README.md", "r") as fh:
    long_description = fh.read()

setup(
    name="genmix",
    version="0.1.0",
    description="Train and evaluate a mixture-of-generators defense against adversarial MNIST inputs",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["unit_tests"]),
    include_package_data=True,
    package_data={"genmix.internal.data": ["*.toml"]},
    python_requires=">=3.9",
    install_requires=[
        "numpy",
        "tqdm",
        "pyyaml",
        "tomli_w",
        "tomli",
        "oyaml",
        "extradict",
        "bitmath",
    ],
    entry_points={
        "console_scripts": [
            "genmix=genmix.main:main",
        ],
    },
)
