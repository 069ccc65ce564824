"""Dispatch-wave routing: epoch simulation, VRPTW solving with dispatch
windows, consensus dispatch policies and a benchmark harness."""

__version__ = "0.1.0"
