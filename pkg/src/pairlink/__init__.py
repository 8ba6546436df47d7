"""Entangled photon-pair fiber link: closed-form model, Monte Carlo
timestamp synthesis, coincidence processing and key-rate analysis."""

__version__ = "0.1.0"
