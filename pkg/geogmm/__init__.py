"""Gaussian mixture fitting by Riemannian optimization on the SPD manifold."""

__version__ = "0.1.0"
