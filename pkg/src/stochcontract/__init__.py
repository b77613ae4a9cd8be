"""Simulation and verification toolkit for stochastic systems with contracting
or B_r-contracting drift."""

__version__ = "0.1.0"
