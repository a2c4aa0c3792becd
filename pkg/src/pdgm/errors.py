"""Exception types shared across the package."""


class PdgmError(Exception):
    """Base class for all package errors."""


class InvalidState(PdgmError):
    """State is inconsistent with the process it is used with."""


class DegenerateGradient(PdgmError):
    """Potential gradient vanished where a reflection was requested."""


class UnknownDataset(PdgmError):
    """Dataset name is not one of the registered generators."""


class ParseError(PdgmError):
    """A delimited file could not be parsed; message names the line."""


class DimensionMismatch(PdgmError):
    """Array shapes do not match the declared architecture."""


class NonFiniteLoss(PdgmError):
    """Loss or gradient became non-finite during training."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class VersionMismatch(PdgmError):
    """Checkpoint header disagrees with the stored parameter vector."""


class ChecksumMismatch(PdgmError):
    """Checkpoint integrity check failed."""


class DomainError(PdgmError):
    """Input left the domain of a loss transform."""


class ModelSpecMismatch(PdgmError):
    """A learned model was paired with a process it was not trained for."""


class OracleGap(PdgmError):
    """Too many lookups fell on cells without oracle coverage."""

    def __init__(self, message, gap_fraction=None):
        super().__init__(message)
        self.gap_fraction = gap_fraction


class ConfigError(PdgmError):
    """Run configuration failed schema validation."""
