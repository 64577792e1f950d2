__version__ = "1.0.0"
__author__ = "Labor Productivity Statistics Team"
