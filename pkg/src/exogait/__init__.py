"""Probabilistic gait-feature control stack for a planar exoskeleton simulator."""

__version__ = "0.1.0"
