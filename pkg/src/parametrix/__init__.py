"""Youla, system-level and input-output parameterizations of stabilizing
controllers for discrete-time LTI plants."""

__version__ = "0.1.0"
