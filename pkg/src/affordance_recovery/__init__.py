"""Spatial affordance fields for detecting and recovering from stalled policy replays."""

__version__ = "0.1.0"
