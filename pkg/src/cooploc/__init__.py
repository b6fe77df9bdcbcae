"""Cooperative localization: centralized EKF, Interim Master D-CL, loose CI baseline and simulation harness."""

__version__ = "0.1.0"
