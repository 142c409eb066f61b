"""Rally-length-dependent serve advantage in tennis.

A hierarchical Bayesian logistic model in which each server's advantage is a
cubic spline in rally length, optionally forced to be non-increasing beyond a
chosen rally length, plus Bradley-Terry style rally abilities.
"""

__version__ = "0.1.0"
