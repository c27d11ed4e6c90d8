"""Numerical laboratory for linear and perturbed differential equations
with piecewise constant argument ``x' = A(t)x + B(t)x([t]) + f(t)``."""

__version__ = "0.1.0"
