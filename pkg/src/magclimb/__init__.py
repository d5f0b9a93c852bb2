"""Hazard-state monitoring toolkit for magnetic-adhesion tracked climbing
robots: physics-based sensor simulation, signal preprocessing and quality
analysis, from-scratch neural and classical classifiers, and the comparison
experiment harness.
"""

__version__ = "0.1.0"
