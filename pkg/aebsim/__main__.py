from aebsim._metadata import __version__ # noqa: F401

import sys

from aebsim.cli import main

sys.exit(main())
