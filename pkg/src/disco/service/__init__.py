"""HTTP service wrapping the calibration core."""

from disco.service.app import app, create_app

__all__ = ["app", "create_app"]
