"""Exception taxonomy. ConfigError maps to CLI exit code 2, NumericError to 3."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration or malformed input document."""


class NumericError(RuntimeError):
    """A numeric procedure failed or was asked to do something unsound."""


class FeasibilityError(NumericError):
    """An infeasible (stage, state, action) combination was used."""


class SizeError(NumericError):
    """A problem exceeds a configured size cap."""


class RegressionError(NumericError):
    """A least-squares fit has too few rows or an otherwise unusable design."""
