"""Detect-and-avoid conflict management for small drones sharing airspace
with electronically conspicuous traffic."""

__version__ = "0.1.0"
