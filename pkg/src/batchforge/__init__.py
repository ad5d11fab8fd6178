"""Balanced order batching: warehouse routing, baselines and a task-oriented graph clustering network."""

__version__ = "0.1.0"
