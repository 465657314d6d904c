"""Simulated IoT microfarm: chamber model, sensor node, gateway, automation."""

__version__ = "0.1.0"
