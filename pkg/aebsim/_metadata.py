__author__ = "aebsim developers"
__version__ = "1.0.0"
