"""Exception taxonomy shared across the package."""


class FtTsqrError(Exception):
    """Base class for package-specific errors."""


class UnsupportedTopologyError(FtTsqrError, ValueError):
    """Process count is not a supported power of two."""


class InvalidScheduleError(FtTsqrError, ValueError):
    """A failure schedule references an impossible rank, step, or phase."""


class ProtocolViolationError(FtTsqrError, RuntimeError):
    """The round engine was driven outside its legal phase order."""


class PeerFailedError(FtTsqrError, RuntimeError):
    """A point-to-point operation addressed a failed or exited process."""


class DefectError(FtTsqrError, RuntimeError):
    """An internal invariant broke; results must not be trusted."""
