"""Distributed deep Q-learning for UAV swarm target search on a grid."""

__version__ = "0.1.0"
