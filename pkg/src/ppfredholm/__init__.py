"""Prediction of the local intensity of a spatial point process in unobserved areas."""
__version__ = "0.1.0"
