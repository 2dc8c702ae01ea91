"""Continuous resonant equation toolkit: lattice resonances, interaction-picture dynamics and the CR operator."""

__version__ = "0.1.0"
