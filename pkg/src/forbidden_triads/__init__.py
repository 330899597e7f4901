"""Forbidden triads in temporal collaboration networks.

Co-play weights, weighted triad censuses, constrained null worlds and the
regression models relating triad densities to session success.
"""

__version__ = "0.1.0"
