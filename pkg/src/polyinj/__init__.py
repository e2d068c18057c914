"""Numerical tools for polyconvex elasticity with boundary energies.

Exterior algebra of minors, Brouwer degree and injectivity diagnostics,
divergence-identity residuals, a cavitating non-injective example, and a
P1 minimizer for polyconvex bulk plus tangentially polyconvex surface
energies.
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
