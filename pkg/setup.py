#!/usr/bin/env python

"""The setup script."""

from setuptools import setup, find_packages

descr = """
``attneraser`` is a desk-scale diffusion model sandbox for object removal by
self-attention redirection. A small U-shaped denoiser is trained from scratch
on a synthetic corpus of shapes painted over known backgrounds. Removal runs
rewrite the decoder self-attention so that no token attends to the object
(attention activation and suppression, with similarity suppression early in
sampling), and steer every sampling step away from the plain prediction
(self-attention redirection guidance). Two inpainting pipelines are provided:
a stochastic one, and a deterministic one built on DDIM inversion.

Because the background behind every object is known exactly, removal quality
is measured with pixel metrics against ground truth.
"""

requirements = ['scipy', 'numpy', 'texttable', 'torch', 'Pillow', 'tqdm']

setup_requirements = ['pytest-runner', ] + requirements

test_requirements = ['pytest>=3', ] + requirements

setup(
        author="attneraser developers",
        python_requires='>=3.8',
        classifiers=[
            'Development Status :: 3 - Alpha',
            'Intended Audience :: Science/Research',
            'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
            'Natural Language :: English',
            'Programming Language :: Python :: 3',
            'Programming Language :: Python :: 3.8',
            'Programming Language :: Python :: 3.9',
            'Programming Language :: Python :: 3.10',
            'Programming Language :: Python :: 3.11',
            ],
        description="object removal by self-attention redirection guidance",
        entry_points={'console_scripts': ['attneraser=attneraser.cli:main']},
        install_requires=requirements,
        license="GNU General Public License v3",
        long_description=descr,
        include_package_data=True,
        keywords='attneraser diffusion inpainting attention',
        name='attneraser',
        version='0.1.0',
        packages=find_packages(include=['attneraser', 'attneraser.*']),
        setup_requires=setup_requirements,
        test_suite='tests',
        tests_require=test_requirements,
        zip_safe=False,
        )
