"""HTTP service exposing masks, metrics, reconstruction and evaluation."""
from .app import create_app

__all__ = ["create_app"]
