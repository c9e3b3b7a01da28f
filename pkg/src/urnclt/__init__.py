"""Occupancy counts of capacity-constrained allocations: exact moments, covariance
asymptotics, and Monte Carlo checks of their joint normal limit."""

__version__ = "0.1.0"
