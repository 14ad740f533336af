"""Frequentist coverage audits for Bayesian imaging credible regions."""

__version__ = "0.1.0"
