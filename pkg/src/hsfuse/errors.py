"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: UsageError/ConfigError mean the caller
got something wrong (exit 2); everything else is a runtime or data failure
(exit 1).
"""


class HsfuseError(Exception):
    """Base class for all package errors."""


class UsageError(HsfuseError):
    """An operation was called with arguments that violate its contract."""


class ConfigError(UsageError):
    """A config file or model configuration is invalid."""


class DimensionError(HsfuseError):
    """Shapes of vectors/matrices do not agree."""


class NumericError(HsfuseError):
    """A computation produced or consumed non-finite values."""


class ValidationError(HsfuseError):
    """Input data (manifest, embedding file, join) failed validation."""


class CheckpointError(HsfuseError):
    """A model checkpoint could not be read."""


class VersionError(CheckpointError):
    """Checkpoint declares an unsupported format version."""


class CorruptionError(CheckpointError):
    """Checkpoint content does not match its declared structure."""


class TransportError(HsfuseError):
    """A remote call failed at the network level."""


class ContractError(HsfuseError):
    """A remote service answered outside its documented contract."""
