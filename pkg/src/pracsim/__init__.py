"""PRAC Rowhammer mitigation simulator and security model."""

__version__ = "0.1.0"
