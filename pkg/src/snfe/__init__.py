"""Simulation and verification of finite-size fluctuations around traveling
waves in stochastic neural fields."""

__version__ = "0.1.0"
