"""Transition densities of diffusions and of their Markov chain approximations."""

__version__ = "0.1.0"
