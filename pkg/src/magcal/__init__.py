"""Magnetometer calibration workflow: synthetic mission, preprocessing, neural calibration,
publication, and a workflow engine with resource accounting."""

__version__ = "0.1.0"
