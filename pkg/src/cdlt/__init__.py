"""Causal dynamical triangulations from size-biased critical Galton-Watson trees,
torus-valued spin systems on them, and diagnostics for the absence of
continuous symmetry breaking."""

__version__ = "0.1.0"
