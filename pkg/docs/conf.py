# Sphinx configuration for the aebsim documentation.
#
# Build locally with
#
#   pip install -r docs/requirements.txt
#   sphinx-build -b html docs docs/_build

import os
import sys
import datetime

# autodoc imports the package from the repository root
sys.path.insert(0, os.path.abspath('..'))

from aebsim._metadata import __version__, __author__

project = 'aebsim'
copyright = f'2024-{datetime.datetime.now().year}, {__author__}'
version = ".".join(__version__.split(".")[:2])
release = __version__

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
    'sphinx.ext.mathjax',
    'sphinx.ext.autosectionlabel',
    'sphinx_rtd_theme'
]

# Section titles such as "Sweeps" repeat across pages
autosectionlabel_prefix_document = True

autodoc_member_order = 'bysource'

master_doc = 'index'
source_suffix = '.rst'
exclude_patterns = ['_build']
pygments_style = 'sphinx'

html_theme = 'sphinx_rtd_theme'
htmlhelp_basename = 'aebsimdoc'

man_pages = [
    ('index', 'aebsim', 'aebsim Documentation', [__author__], 1)
]
