"""Semiclassical resolvent and trapping analysis for warped products.

The package reduces a warped-product Laplacian to 1D semiclassical operators,
classifies the trapping of the effective potential, predicts the cutoff
resolvent scaling law and checks it numerically.
"""

__all__ = ["__version__"]

__version__ = "0.1.0"
