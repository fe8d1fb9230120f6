"""Fixed-stress splitting for quasi-static Biot poroelasticity with
dilation-dependent hydraulic conductivity."""

__version__ = "0.1.0"
