"""aebsim: Closed-loop simulation of emergency braking under sensor attacks.

The aebsim.analysis submodule provides methods for reading and
visualizing run traces and sweep results written by aebsim.recording
and aebsim.experiments.
"""

from aebsim._metadata import __version__ # noqa: F401
