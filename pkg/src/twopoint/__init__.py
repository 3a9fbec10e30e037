"""Two-point forecast mechanisms for decentralized two-stage distributionally robust planning."""

__version__ = "0.1.0"
