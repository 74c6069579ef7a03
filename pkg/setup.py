from setuptools import setup


setup(
    name="pysafelane",
    version="0.1.0",
    author="pysafelane contributors",
	license="MIT",
    description="Lane-keeping MPC with a prescribed-time control barrier function safety filter for obstacle avoidance.",
    keywords="mpc control-barrier-function lane-keeping obstacle-avoidance",
    packages=['pysafelane', 'pysafelane.objects'],
    package_data={'pysafelane': ['scenarios/*.yaml']},
    python_requires='>=3.8',
    install_requires=['numpy', 'scipy', 'quadprog', 'pyyaml', 'matplotlib'],
    entry_points={'console_scripts': ['pysafelane=pysafelane.cli:main']},
)
