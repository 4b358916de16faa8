"""
flakeloc - Flaky Class Localisation

Ranks the classes of a program by how likely they are to cause flaky test
behaviour, using spectrum-based scores, class metrics, evolved formulae and
ensemble voting.
"""

__version__ = "0.1.0"
__author__ = "flakeloc Team"
__description__ = "Localise the classes responsible for flaky tests"
