"""Exception types shared across the package."""


class PercolabError(Exception):
    """Base class for all package errors."""


class PreconditionError(PercolabError):
    """An operation was called with inputs violating its contract."""


class UnsupportedError(PercolabError):
    """Requested quantity is not defined / not supported on finite boxes."""


class SeedViolationError(PercolabError):
    """Perforation frame contains an s-bad vertex."""


class InternalConsistencyError(PercolabError):
    """A structural guarantee that should hold by construction failed."""


class DegenerateWalkError(PercolabError):
    """Walk started from an isolated vertex (mu = 0)."""


class ConfigError(PercolabError):
    """Configuration file failed validation; carries a location hint."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class StageError(PercolabError):
    """A pipeline stage failed or a stage dependency is missing."""


class IntegrityError(PercolabError):
    """Manifest or bundle contents do not match their recorded hashes."""
