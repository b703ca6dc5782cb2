"""OFDM link simulation with learned channel estimation and phase-noise
compensation."""

__version__ = "0.1.0"
