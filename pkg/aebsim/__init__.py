"""aebsim: Closed-loop simulation of emergency braking under sensor attacks.

Scenario documents are handled by aebsim.scenarios
Single runs and sweeps are handled by aebsim.simulation and aebsim.experiments
Attack scenario generation is handled by aebsim.stpa
Reading results back is handled by functions in aebsim.analysis

Run "python -m aebsim --help" for the command-line interface.
"""

from aebsim._metadata import __version__ # noqa: F401
