"""Monte Carlo and exact tools for stabilizing functionals of marked Poisson processes."""

__version__ = "0.1.0"
