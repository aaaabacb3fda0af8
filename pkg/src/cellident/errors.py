"""Exceptions shared across subpackages."""

from __future__ import annotations

__all__ = ["ConfigurationError"]


class ConfigurationError(ValueError):
    """A request that the chosen model, cost or algorithm cannot honour.

    Raised at setup time, e.g. asking for gradients of a cost that has none.
    """
