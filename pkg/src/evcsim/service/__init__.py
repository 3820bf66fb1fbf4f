"""HTTP service exposing the simulator; the CLI is a thin client of it."""

from .app import create_app

__all__ = ["create_app"]
