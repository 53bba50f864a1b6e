"""Unrolled multi-coil cine MRI reconstruction with prompt-conditioned refiners."""
__version__ = "0.1.0"
