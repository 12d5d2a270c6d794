"""Superfluorescence simulator based on correlation functions, with a stochastic Maxwell-Bloch baseline."""

__version__ = "0.1.0"
