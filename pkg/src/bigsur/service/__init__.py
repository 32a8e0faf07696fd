"""HTTP surface over a workspace."""

from .app import ServiceHandle, create_app, serve

__all__ = ["ServiceHandle", "create_app", "serve"]
