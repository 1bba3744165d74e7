"""Population-wide Bayesian network detection of airborne anthrax releases from ED case streams."""

__version__ = "0.1.0"
