"""Input-constrained multi-agent pursuit-evasion graphical games."""

__version__ = "0.1.0"
