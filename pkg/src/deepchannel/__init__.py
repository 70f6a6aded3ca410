"""Training through configurable learning channels, plus an ODE bench for their learning dynamics."""

__version__ = "0.1.0"
