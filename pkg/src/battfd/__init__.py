"""Battery fault detection: physics model, uncertainty learning, detection observers."""

__version__ = "0.1.0"
