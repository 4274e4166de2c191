"""Federated multi-view clustering via synergistic contrast, desk-scale simulator."""

__version__ = "0.1.0"
