"""Risk-sensitive solar hosting-capacity analysis for radial networks."""

__version__ = "0.1.0"
