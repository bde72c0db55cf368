"""Personalized federated hyperparameter optimization with a shared policy network."""

__version__ = "0.1.0"
