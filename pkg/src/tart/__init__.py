"""Temporal action representations for hybrid resource/maneuver control."""

__version__ = "0.1.0"
