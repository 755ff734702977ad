"""Finite element simulator for dispersed Euler-Euler multiphase flow."""

__version__ = "0.1.0"
