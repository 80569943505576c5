"""Gibbs measures for the periodic BBM equation: spectral fields, Gaussian
samplers, perturbed operators, flows and Monte Carlo verdicts."""

__version__ = "0.1.0"
