"""Partial-identification bounds for binary-outcome treatment effects.

Population bound engine (worst-case, widest-width, covariate-sharpened),
the four-way width decomposition, instrument identification power, MLE
estimation with simulation-based half-median-unbiased corrections, and a
Monte Carlo harness.
"""

__version__ = "0.1.0"
