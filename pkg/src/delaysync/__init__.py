"""Velocity estimation and position synchronization of networked second-order
agents over lossy links with bounded, time-varying delays."""

__version__ = "0.1.0"
