"""Tightly-coupled UWB-IMU error-state Kalman filter with online lever-arm and
temporal-offset calibration, observability diagnostics, a scenario simulator
and anchor self-calibration."""

__version__ = "0.1.0"
