"""Errors raised by the extraction sidecar."""


class ExtractError(Exception):
    """Base class; maps to CLI exit code 2."""


class ValidationError(ExtractError):
    """Bad input data or parameters; maps to CLI exit code 1."""


class WeightsError(ExtractError):
    """Requested encoder weights cannot be obtained."""
