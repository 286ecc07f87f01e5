"""Weak-form PINN engine for hyperelastic forward solves and calibration."""

__version__ = "0.1.0"
