"""
flakeloc Command Line Module
"""

from .main import app

__all__ = ["app"]
