"""A setup file for the sdncmv package.

Usage:

    python setup.py bdist_wheel
"""
import setuptools

with open('README.md', 'r') as f:
    LONG_DESCRIPTION = f.read()

setuptools.setup(
    name='sdncmv',
    version='0.1',
    description=
    'Subject-level brain connectivity classification and differential '
    'network recovery from matrix-variate data',
    long_description=LONG_DESCRIPTION,
    long_description_content_type='text/markdown',
    packages=setuptools.find_packages(),
    python_requires='>=3.8',
    install_requires=[
        'absl-py',
        'Jinja2',
        'joblib',
        'networkx',
        'numpy',
        'pandas',
        'scikit-learn',
        'scipy',
    ],
    entry_points={
        'console_scripts': ['sdncmv=sdncmv.cli:run'],
    },
    classifiers=[
        'Programming Language :: Python :: 3',
        'License :: OSI Approved :: Apache Software License',
        'Operating System :: OS Independent',
    ],
)
