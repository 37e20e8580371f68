"""HTTP service: FastAPI app, request/response schemas, thin client."""

from .app import create_app

__all__ = ["create_app"]
