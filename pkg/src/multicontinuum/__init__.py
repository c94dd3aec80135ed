"""Multicontinuum upscaling of high-contrast diffusion with constrained cell problems."""

__version__ = "0.1.0"
