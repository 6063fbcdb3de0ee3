"""HTTP service wrapping the peel workbench verbs."""

from .app import create_app

__all__ = ["create_app"]
