"""Quantum trajectories of monitored free fermions and the matching analytic theory."""

__version__ = "0.1.0"
