"""Inertial viscoelastic solids with self-contact in two dimensions."""

__version__ = "0.1.0"
