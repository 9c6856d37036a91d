"""Exception hierarchy shared by the library, service, and CLI.

Each error carries a stable ``code`` so the HTTP layer can map library
failures to exactly one wire-level error code.
"""

from __future__ import annotations


class EditingError(Exception):
    """Base class for all library errors."""

    code = "bad_params"

    def __init__(self, message: str, detail: dict | None = None):
        super().__init__(message)
        self.detail = detail or {}


class BadParamsError(EditingError):
    code = "bad_params"


class ShapeError(EditingError):
    code = "bad_shape"


class CacheMissError(EditingError):
    code = "cache_miss"


class BackendUnavailableError(EditingError):
    code = "backend_unavailable"


class NotFoundError(EditingError):
    code = "not_found"


class ConflictError(EditingError):
    code = "conflict"
