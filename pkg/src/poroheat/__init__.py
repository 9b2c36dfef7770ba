"""Multiphase heat transport in layered porous media with operator splitting."""

__version__ = "0.1.0"
