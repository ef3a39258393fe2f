"""Passive-steering state preparation as an adversarial defense for small quantum classifiers."""

__version__ = "0.1.0"
