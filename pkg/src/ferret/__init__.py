"""Memory-budgeted pipeline-parallel online continual learning."""

__version__ = "0.1.0"
