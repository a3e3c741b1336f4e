"""Probabilistic cellular automata on finite truncations: entropy bounds and the action functional."""

__version__ = "0.1.0"
