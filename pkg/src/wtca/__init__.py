"""Approximate dynamic programming for finite-horizon MDPs.

Value-function fitting by smoothed block coordinate descent, pathwise dual
penalties, regression baselines, and Monte Carlo bound estimation.
"""

from .errors import ConfigError, FeasibilityError, NumericError, RegressionError, SizeError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FeasibilityError",
    "NumericError",
    "RegressionError",
    "SizeError",
    "__version__",
]
