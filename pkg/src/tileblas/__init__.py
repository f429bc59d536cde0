"""Tiled level-3 BLAS runtime over a simulated multi-accelerator fabric.

The package splits dense level-3 routines into per-output-tile tasks,
schedules them across simulated devices with locality-aware priorities
and work stealing, keeps tiles in per-device caches kept coherent by a
holder directory, and accounts every transfer and kernel in a
deterministic cost model.  Numerics are real (float64); time is
simulated.
"""

from .config import default_topology, load_topology, parse_topology
from .devices import (
    ACCELERATOR, DEFAULT_HOST_BANDWIDTH, DEFAULT_PEER_BANDWIDTH,
    HOST_COMPUTE, DeviceDesc, Metrics, Topology, TraceEvent,
)
from .errors import (
    ArenaOutOfMemoryError, CapacityDeadlockError, ConfigError,
    InvalidArgumentError, InvalidFreeError, NotEvictableError,
    SingularMatrixError, TileBlasError,
)
from .operands import build_call, dense_snapshot, oracle_result, relative_error
from .routines import (
    ROUTINES, RoutineCall, TaskPlan, degree_of_parallelism,
    gemm_flop_fraction, generate_tasks,
)
from .scheduler import RunOptions, RunResult, TaskQueue, run_call, run_plan
from .tiling import MatrixDesc, TiledMatrix, TileRef, make_tiled

__version__ = "0.1.0"

__all__ = [
    "ACCELERATOR", "HOST_COMPUTE",
    "DEFAULT_HOST_BANDWIDTH", "DEFAULT_PEER_BANDWIDTH",
    "ArenaOutOfMemoryError", "CapacityDeadlockError", "ConfigError",
    "DeviceDesc", "InvalidArgumentError", "InvalidFreeError",
    "MatrixDesc", "Metrics", "NotEvictableError", "ROUTINES",
    "RoutineCall", "RunOptions", "RunResult", "SingularMatrixError",
    "TaskPlan", "TaskQueue", "TileBlasError", "TiledMatrix", "TileRef",
    "Topology", "TraceEvent", "build_call", "default_topology",
    "degree_of_parallelism", "dense_snapshot", "gemm_flop_fraction",
    "generate_tasks", "load_topology", "make_tiled", "oracle_result",
    "parse_topology", "relative_error", "run_call", "run_plan", "__version__",
]
