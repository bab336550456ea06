"""Exception types shared across the package.

The CLI maps each class onto a stable exit code, so library code raises the
most specific one that applies.
"""

from __future__ import annotations


class ShapeError(ValueError):
    """Inputs have incompatible particle counts or dimensions."""


class ConfigError(ValueError):
    """An experiment configuration is missing a key or holds an invalid value."""


class BoundViolation(RuntimeError):
    """A drift or diffusion coefficient exceeded the characteristic bound L."""


class SolverError(RuntimeError):
    """A numerical solver could not produce a trustworthy answer."""
