"""Simulation and benchmarking of spatial GPU isolation for DNN inference."""

__version__ = "0.1.0"
