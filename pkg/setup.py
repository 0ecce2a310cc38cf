try:
    from setuptools import setup
except ImportError:
    from distutils.core import setup

with open('README.rst') as f:
    README = f.read()

setup(
    name='songshield',
    version='0.1.0',
    packages=['songshield'],
    scripts=[],
    license='GPLv3',
    description='Imperceptible perturbations that protect singing voices from voice conversion.',
    long_description=README,
    classifiers=[
        "Development Status :: 3 - Alpha",
        "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
        "Topic :: Multimedia :: Sound/Audio :: Analysis",
        "Topic :: Security",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11"
    ],
    keywords='singing voice conversion protection adversarial audio psychoacoustic',
    python_requires='>=3.9',
    install_requires=[
        'numpy>=1.21',
        'scipy>=1.7',
        'torch>=1.10',
        'librosa>=0.9',
        'soundfile>=0.10',
    ],
    entry_points={
        'console_scripts': ['songshield = songshield.cli:main'],
    },
    include_package_data=True,
    zip_safe=False
)
