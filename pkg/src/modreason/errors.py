"""Exception taxonomy shared across the package."""


class ModReasonError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(ModReasonError):
    """Tensor dimension mismatch; the message names both offending shapes."""


class ConfigError(ModReasonError):
    """Invalid or inconsistent configuration, raised before any compute."""


class ValidationError(ModReasonError):
    """Malformed data: bad target distributions, bad JSONL records, etc."""


class ContractError(ModReasonError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class TokenizationError(ModReasonError):
    """Token id outside the vocabulary where a hard failure is required."""


class GenerationError(ModReasonError):
    """Synthetic data generation could not satisfy its constraints."""
