"""Splitting magnetic microtrap: spectrum, non-adiabatic excitation and ramp optimization."""

__version__ = "0.1.0"
