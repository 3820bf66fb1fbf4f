"""Standalone PV/EV charging-station microgrid: simulation, attack injection,
detection, and mitigation (rule-based and learned)."""

__version__ = "0.1.0"
