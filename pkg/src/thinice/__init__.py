"""Desk-scale adversarial pruning lab: robust training, pruning, attack ensembles, thin-ice statistics."""

__version__ = "0.1.0"
