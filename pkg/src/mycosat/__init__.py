"""Soil fungal richness from satellite time series and environmental covariates."""
__version__ = "0.1.0"
