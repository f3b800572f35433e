"""Planar continuum-arm simulation, fiber-optic sensing, and tip control."""

from .errors import CdmLabError

__all__ = ["CdmLabError"]
__version__ = "0.1.0"
