"""Spectral organization analysis of atrial fibrillatory waves from single-lead ECGs."""

__version__ = "0.1.0"
