"""Exception types shared across the package."""


class EcgmvError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(EcgmvError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigurationError(EcgmvError):
    """An option value is outside the supported set."""


class ContractError(EcgmvError):
    """A caller violated an operation's preconditions."""


class MatParseError(EcgmvError):
    """A MAT file could not be decoded."""


class ManifestError(EcgmvError):
    """A label manifest row is malformed."""


class RecordRejectedError(EcgmvError):
    """A record failed preprocessing validation (e.g. contains NaN)."""

    def __init__(self, record_id: str, reason: str):
        super().__init__(f"record {record_id!r} rejected: {reason}")
        self.record_id = record_id


class CheckpointError(EcgmvError):
    """A checkpoint file is unreadable or inconsistent."""


class TrainingDivergedError(EcgmvError):
    """Training produced a non-finite loss."""
