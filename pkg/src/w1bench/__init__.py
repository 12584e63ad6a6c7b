"""Benchmark for neural W1 solvers on MinFunnel pairs with known OT gradients."""

__version__ = "0.1.0"
