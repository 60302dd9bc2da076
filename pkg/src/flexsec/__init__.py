"""Secrecy-aware flexible-duplex scheduling: simulator, solvers and a pair GNN."""

__version__ = "0.1.0"
