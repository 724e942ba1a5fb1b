"""Multipath TCP congestion control: fluid model, equilibrium and stability analysis,
and a packet-level simulator."""

__version__ = "0.1.0"
