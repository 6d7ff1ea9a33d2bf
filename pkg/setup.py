import os

import setuptools

THIS_DIR = os.path.dirname(os.path.abspath(__file__))

with open(os.path.join(THIS_DIR, 'README.md')) as readme:
    long_description = readme.read()

setuptools.setup(
    name='fedalc',
    version='0.1.0',
    description='Federated multi-label learning with only positive labels, '
                'exploring label correlations',
    long_description=long_description,
    long_description_content_type='text/markdown',
    classifiers=[
        'Development Status :: 3 - Alpha',

        'Intended Audience :: Science/Research',

        'Topic :: Scientific/Engineering :: Artificial Intelligence',

        'License :: OSI Approved :: MIT License',

        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
    ],
    python_requires='>=3.7',
    install_requires=[
        'numpy>=1.17',
        'scipy>=1.3',
    ],
    extras_require={
        'test': ['pytest>=6'],
    },
    packages=['fedalc'],
    entry_points={
        'console_scripts': [
            'fedalc-prepare=fedalc.data:cli_main',
            'fedalc-run=fedalc.federation:cli_main',
            'fedalc-verify=fedalc.verify:cli_main',
            'fedalc=fedalc.__main__:cli_main',
        ]
    },
    author='fedalc contributors',
)
