"""Tomography of a parametrically squeezed mechanical oscillator under continuous measurement."""

from .errors import (
    ContractError,
    InvalidPovmError,
    NumericalError,
    ParameterError,
    RegimeWarning,
    TruncationError,
)
from .model import INFINITE, ProtocolSchedule, Regime, SystemParams, derived_params, thresholds

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "INFINITE",
    "InvalidPovmError",
    "NumericalError",
    "ParameterError",
    "ProtocolSchedule",
    "Regime",
    "RegimeWarning",
    "SystemParams",
    "TruncationError",
    "__version__",
    "derived_params",
    "thresholds",
]
