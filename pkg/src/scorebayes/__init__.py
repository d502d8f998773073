"""Bayesian inference with proper scoring rules: calibrated SR-posteriors and Godambe reference priors."""

__version__ = "0.1.0"
