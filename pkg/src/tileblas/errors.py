"""Exception types shared across the runtime."""


class TileBlasError(Exception):
    """Base class for all runtime errors."""


class InvalidArgumentError(TileBlasError, ValueError):
    """A call violated a documented precondition (shape, range, flag)."""


class SingularMatrixError(TileBlasError):
    """A triangular solve met an exact zero on a non-unit diagonal."""


class ArenaOutOfMemoryError(TileBlasError):
    """An arena allocation did not fit.

    Non-fatal by design: the tile cache catches this and evicts until the
    allocation fits or nothing evictable remains.
    """


class InvalidFreeError(TileBlasError):
    """arena free() was passed an offset that is not an allocation start."""


class NotEvictableError(TileBlasError):
    """Every cached block is pinned by an in-flight reader.

    Internal signal: the scheduler answers it with a stream synchronization
    and a reader update, then retries once before giving up.
    """


class CapacityDeadlockError(TileBlasError):
    """Device memory cannot hold the working set of the concurrent tasks."""


class ConfigError(TileBlasError):
    """Topology/config file rejected (parse error or invalid field)."""
