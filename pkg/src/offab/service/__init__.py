"""HTTP service layer over the evaluation engine."""

from .app import app, create_app

__all__ = ["app", "create_app"]
