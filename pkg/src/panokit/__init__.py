"""Panoramic room-layout estimation built from scratch on numpy."""

__version__ = "0.1.0"
