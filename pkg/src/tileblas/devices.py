"""Simulated devices: topology description, engine clocks and metrics.

Every accelerator has one compute engine, one DMA engine and four streams.
Streams are ordering lanes: an operation on a stream starts no earlier
than the previous operation on that stream.  The compute engine serializes
kernels across streams; the DMA engine serializes transfers.  Durations
come from a deterministic cost model: bytes / link bandwidth for
transfers, flops / device speed for kernels.

A host_compute device models CPU workers chewing whole tasks next to the
accelerators: it has a compute engine but no streams, no arena and
zero-cost data access.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ConfigError

__all__ = [
    "ACCELERATOR", "HOST_COMPUTE",
    "DEFAULT_HOST_BANDWIDTH", "DEFAULT_PEER_BANDWIDTH",
    "DeviceDesc", "Topology", "DeviceEngines",
    "TraceEvent", "DeviceMetrics", "Metrics", "exposed_comm_time",
]

ACCELERATOR = "accelerator"
HOST_COMPUTE = "host_compute"

# Measured defaults for the simulated links, bytes/second.
DEFAULT_HOST_BANDWIDTH = 6.54e9
DEFAULT_PEER_BANDWIDTH = 7.8e9

N_STREAMS = 4


@dataclass(frozen=True)
class DeviceDesc:
    device_id: int
    kind: str = ACCELERATOR
    speed: float = 1.0e12          # flops per second
    arena_capacity: int = 256 * 2**20
    peer_group: object = None      # None = standalone


@dataclass
class Topology:
    devices: list[DeviceDesc]
    host_device_bandwidth: float = DEFAULT_HOST_BANDWIDTH
    peer_bandwidth: float = DEFAULT_PEER_BANDWIDTH

    def __post_init__(self):
        if not self.devices:
            raise ConfigError("topology has no devices")
        seen = set()
        for d in self.devices:
            if d.device_id in seen:
                raise ConfigError(f"duplicate device_id {d.device_id}")
            seen.add(d.device_id)
            if d.kind not in (ACCELERATOR, HOST_COMPUTE):
                raise ConfigError(f"device {d.device_id}: unknown kind {d.kind!r}")
            if d.kind == ACCELERATOR:
                if d.speed <= 0:
                    raise ConfigError(
                        f"device {d.device_id}: accelerator speed must be > 0")
                if d.arena_capacity <= 0:
                    raise ConfigError(
                        f"device {d.device_id}: arena_capacity must be > 0")
            elif d.speed < 0:
                raise ConfigError(
                    f"device {d.device_id}: host_compute speed must be >= 0")
        for name in ("host_device_bandwidth", "peer_bandwidth"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")

    def accelerators(self) -> list[DeviceDesc]:
        return [d for d in self.devices if d.kind == ACCELERATOR]

    def host_workers(self) -> list[DeviceDesc]:
        return [d for d in self.devices if d.kind == HOST_COMPUTE and d.speed > 0]

    def peer_group_of(self, desc: DeviceDesc):
        """Effective peer group; a device without one is its own group."""
        if desc.peer_group is None:
            return ("standalone", desc.device_id)
        return desc.peer_group


class TraceEvent(NamedTuple):
    time_start: float
    time_end: float
    device: int
    stream: int          # -1 for events not tied to a stream
    event: str           # H2D | D2H | D2D | KERNEL | SYNC
    bytes_or_flops: int
    task_id: int         # -1 when not task-bound
    k: int               # -1 when not step-bound


class DeviceEngines:
    """Per-device simulated clocks plus the interval log for accounting."""

    __slots__ = ("device_id", "speed", "compute_free", "dma_free",
                 "stream_last", "issue_floor", "kernel_intervals",
                 "transfer_intervals", "used")

    def __init__(self, device_id: int, speed: float):
        self.device_id = device_id
        self.speed = speed
        self.compute_free = 0.0
        self.dma_free = 0.0
        self.stream_last = [0.0] * N_STREAMS
        self.issue_floor = 0.0
        self.kernel_intervals: list[tuple[float, float]] = []
        self.transfer_intervals: list[tuple[float, float]] = []
        self.used = False

    def transfer(self, nbytes: int, bandwidth: float, stream: int,
                 not_before: float = 0.0) -> tuple[float, float]:
        """Schedule a transfer; returns (start, end) sim times.

        Zero bytes cost zero time and leave all clocks untouched.
        """
        if nbytes == 0:
            t = max(self.dma_free, self.stream_last[stream],
                    self.issue_floor, not_before)
            return t, t
        start = max(self.dma_free, self.stream_last[stream],
                    self.issue_floor, not_before)
        end = start + nbytes / bandwidth
        self.dma_free = end
        self.stream_last[stream] = end
        self.transfer_intervals.append((start, end))
        self.used = True
        return start, end

    def kernel(self, flops: int, stream: int,
               not_before: float = 0.0) -> tuple[float, float]:
        start = max(self.compute_free, self.stream_last[stream],
                    self.issue_floor, not_before)
        end = start + flops / self.speed
        self.compute_free = end
        self.stream_last[stream] = end
        self.kernel_intervals.append((start, end))
        self.used = True
        return start, end

    def host_task(self, flops: int, not_before: float) -> tuple[float, float]:
        """Host workers have a single compute engine and no streams."""
        start = max(self.compute_free, not_before)
        end = start + flops / self.speed
        self.compute_free = end
        self.kernel_intervals.append((start, end))
        self.used = True
        return start, end

    def drain_time(self) -> float:
        return max(max(self.stream_last), self.compute_free, self.dma_free)

    def sync_streams(self) -> float:
        """Barrier on all streams; later issues start at or after it."""
        t = self.drain_time()
        self.issue_floor = max(self.issue_floor, t)
        return t


def exposed_comm_time(transfers, kernels) -> float:
    """Transfer time not hidden behind this device's compute.

    Both interval lists are nondecreasing in start time because each is
    produced by a serializing engine.
    """
    exposed = 0.0
    ki = 0
    n = len(kernels)
    for ts, te in transfers:
        while ki < n and kernels[ki][1] <= ts:
            ki += 1
        overlap = 0.0
        j = ki
        while j < n and kernels[j][0] < te:
            overlap += min(te, kernels[j][1]) - max(ts, kernels[j][0])
            j += 1
        exposed += (te - ts) - overlap
    return exposed


@dataclass
class DeviceMetrics:
    compt_seconds: float = 0.0
    comm_unoverlapped_seconds: float = 0.0
    other_seconds: float = 0.0
    h2d_bytes: int = 0
    d2h_bytes: int = 0
    d2d_in_bytes: int = 0
    d2d_out_bytes: int = 0

    def elapsed_seconds(self) -> float:
        return (self.compt_seconds + self.comm_unoverlapped_seconds
                + self.other_seconds)

    def busy_seconds(self) -> float:
        return self.compt_seconds + self.comm_unoverlapped_seconds


@dataclass
class Metrics:
    makespan_seconds: float = 0.0
    l1_hits: int = 0
    l2_hits: int = 0
    host_fetches: int = 0
    devices: dict = field(default_factory=dict)  # device_id -> DeviceMetrics

    def to_dict(self) -> dict:
        return {
            "makespan_seconds": self.makespan_seconds,
            "cache": {
                "l1_hits": self.l1_hits,
                "l2_hits": self.l2_hits,
                "host_fetches": self.host_fetches,
            },
            "devices": {
                str(dev_id): {
                    "compt_seconds": m.compt_seconds,
                    "comm_unoverlapped_seconds": m.comm_unoverlapped_seconds,
                    "other_seconds": m.other_seconds,
                    "h2d_bytes": m.h2d_bytes,
                    "d2h_bytes": m.d2h_bytes,
                    "d2d_in_bytes": m.d2d_in_bytes,
                    "d2d_out_bytes": m.d2d_out_bytes,
                }
                for dev_id, m in sorted(self.devices.items())
            },
        }

    def total_h2d_bytes(self) -> int:
        return sum(m.h2d_bytes for m in self.devices.values())

    def total_d2d_bytes(self) -> int:
        return sum(m.d2d_in_bytes for m in self.devices.values())
