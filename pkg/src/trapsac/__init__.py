"""Highway trap-escape simulator and rule-guided discrete soft actor-critic."""

__version__ = "0.1.0"
