"""Secrecy-energy-efficient scheduling, power and trajectory design for multi-UAV secure transmission."""

__version__ = "0.1.0"
