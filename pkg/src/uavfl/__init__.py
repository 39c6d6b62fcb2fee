"""Deterministic simulator of cluster-based federated learning over a
two-cluster UAV fleet, with per-round energy and communication accounting."""

__version__ = "0.1.0"
