"""Packet-level multipath congestion control with a Transformer Q-learning agent."""

__version__ = "0.1.0"
