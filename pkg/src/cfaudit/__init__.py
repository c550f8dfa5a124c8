"""Counterfactual audit of device-measurement bias in clinical ML models."""

__version__ = "0.1.0"
