"""Locality-aware dynamic runtime over the simulated device fabric.

Ready tasks sit in one global FIFO queue.  Each accelerator worker keeps
a reservation station of up to eight upcoming tasks; at the start of a
batch it synchronizes its streams, gives back the reader pins of the
previous batch, refills the station from the queue (stealing from an
overloaded peer station when the queue is dry), and maps the four
highest-priority tasks onto its four streams.  Priority counts, per
kernel step, how many of the step's input tiles are already in this
device's cache (worth 2 each) or in a peer's cache (worth 1).

A sweep then walks the reduction index: each round issues one k-group of
every active task on its stream — tile translations (which may schedule
host or peer transfers), then the kernel.  A task whose k-range runs out
writes its output tile back to the host, vacates the slot, and the best
pending task is promoted at that round boundary.

Kernels execute their real numerics eagerly at issue time; engine clocks
assign every transfer and kernel a simulated interval, and those
intervals roll up into the run metrics.  Deterministic mode drives the
workers from a single thread in virtual-time order (earliest engine
drain first), so identical inputs give identical metrics; concurrent
mode runs one thread per worker with the same per-worker logic and may
legitimately time-shuffle the metrics, but never the numerics.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass

from .cache import L1_HIT, L2_HIT, CoherenceDirectory, DeviceTileCache
from .devices import (
    N_STREAMS, DeviceDesc, DeviceEngines, DeviceMetrics,
    Metrics, Topology, TraceEvent, exposed_comm_time,
)
from .errors import CapacityDeadlockError, ConfigError
from .memory import Arena
from .routines import (
    RoutineCall, Task, TaskPlan, apply_step_arrays, execute_task_on_host,
    generate_tasks,
)
from .tiling import buffer_as_tile, tile_host_copy_in, tile_host_copy_out

__all__ = ["TaskQueue", "RunOptions", "RunResult", "ReservationStation",
           "run_call", "run_plan"]

# Every concurrent task needs its output buffer plus a step's two input
# tiles resident at once; 4 · 3 full tiles is the contractual floor below
# which a topology is rejected outright.
WORKING_SET_TILES = 12


class TaskQueue:
    """FIFO multi-producer multi-consumer queue of ready task ids.

    Items are (task_id, release_time) pairs; the release time is the
    simulated instant the task became ready, and floors every simulated
    operation the task later performs.  Append and popleft are atomic,
    so each item is handed out exactly once with no further locking.
    """

    def __init__(self):
        self._items = deque()

    def put(self, item) -> None:
        self._items.append(item)

    def get(self):
        try:
            return self._items.popleft()
        except IndexError:
            return None

    def __len__(self) -> int:
        return len(self._items)


@dataclass
class RunOptions:
    execution: str = "deterministic"     # or "concurrent"
    rs_capacity: int = 8
    l1_enabled: bool = True
    l2_enabled: bool = True
    record_trace: bool = False


@dataclass
class RunResult:
    metrics: Metrics
    trace: list[TraceEvent]
    tasks_by_device: dict[int, int]
    plan: TaskPlan


class _SlotEntry:
    __slots__ = ("task", "release_time", "priority")

    def __init__(self, task: Task, release_time: float):
        self.task = task
        self.release_time = release_time
        self.priority = 0


class ReservationStation:
    """Per-device buffer of upcoming tasks, open to theft."""

    def __init__(self, device_id: int, capacity: int):
        self.device_id = device_id
        self.capacity = capacity
        self.lock = threading.Lock()
        self._pending: list[_SlotEntry] = []

    def pending_count(self) -> int:
        with self.lock:
            return len(self._pending)

    def room(self, in_flight: int) -> int:
        with self.lock:
            return self.capacity - in_flight - len(self._pending)

    def put(self, entry: _SlotEntry) -> None:
        with self.lock:
            self._pending.append(entry)

    def pop_best(self) -> _SlotEntry | None:
        """Remove and return the highest-priority pending entry.

        Ties break toward the smaller task id for reproducibility.
        """
        with self.lock:
            if not self._pending:
                return None
            best = min(self._pending,
                       key=lambda e: (-e.priority, e.task.task_id))
            self._pending.remove(best)
            return best

    def steal_lowest(self) -> _SlotEntry | None:
        """Victim side of work stealing: gives up only a pending task,
        and only when at least two are pending (never starves itself)."""
        with self.lock:
            if len(self._pending) < 2:
                return None
            worst = min(self._pending,
                        key=lambda e: (e.priority, e.task.task_id))
            self._pending.remove(worst)
            return worst

    def entries(self) -> list[_SlotEntry]:
        with self.lock:
            return list(self._pending)


class _ActiveSlot:
    __slots__ = ("entry", "stream", "cursor", "c_offset", "c_elems")

    def __init__(self, entry: _SlotEntry, stream: int):
        self.entry = entry
        self.stream = stream
        self.cursor = 0
        self.c_offset = -1
        self.c_elems = 0


class _Runtime:
    """Shared state for one call's execution."""

    def __init__(self, plan: TaskPlan, topology: Topology,
                 options: RunOptions):
        self.plan = plan
        self.topology = topology
        self.options = options
        self.queue = TaskQueue()
        self.directory = CoherenceDirectory()
        self.total = len(plan.tasks)
        self._done = 0
        self._deps = {t.task_id: t.deps_remaining for t in plan.tasks}
        self._lock = threading.Lock()
        self.trace: list[TraceEvent] = []
        self._trace_lock = threading.Lock()
        self.device_metrics: dict[int, DeviceMetrics] = {
            d.device_id: DeviceMetrics() for d in topology.devices}
        for task in plan.tasks:
            if task.deps_remaining == 0:
                self.queue.put((task.task_id, 0.0))

    def done(self) -> bool:
        with self._lock:
            return self._done >= self.total

    def complete_task(self, task: Task, at_time: float) -> None:
        with self._lock:
            self._done += 1
            for dep_id in task.dependents:
                self._deps[dep_id] -= 1
                if self._deps[dep_id] == 0:
                    self.queue.put((dep_id, at_time))

    def record(self, event: TraceEvent) -> None:
        if self.options.record_trace:
            with self._trace_lock:
                self.trace.append(event)

    def add_d2d_out(self, device_id: int, nbytes: int) -> None:
        with self._lock:
            self.device_metrics[device_id].d2d_out_bytes += nbytes


class _AcceleratorWorker:
    """One simulated accelerator: station, cache, engines, sweep state.

    Also serves as the fetch callback object for cache translation: the
    ``_fx_*`` fields carry the stream / floor / trace context of the
    translation in progress.
    """

    def __init__(self, desc: DeviceDesc, runtime: _Runtime):
        self.desc = desc
        self.device_id = desc.device_id
        self.runtime = runtime
        self.engines = DeviceEngines(desc.device_id, desc.speed)
        self.arena = Arena(desc.arena_capacity)
        self.cache = DeviceTileCache(
            desc.device_id, self.arena, runtime.directory,
            peer_group=runtime.topology.peer_group_of(desc),
            l2_enabled=runtime.options.l2_enabled)
        self.rs = ReservationStation(desc.device_id,
                                     runtime.options.rs_capacity)
        self.dm = runtime.device_metrics[desc.device_id]
        self.active: list[_ActiveSlot | None] = [None] * N_STREAMS
        self.sweeping = False
        self._pins = []            # blocks pinned since the last sync point
        self.l1_hits = 0
        self.l2_hits = 0
        self.host_fetches = 0
        self.tasks_done = 0
        self._sync_epoch = 0
        self._fx_stream = 0
        self._fx_floor = 0.0
        self._fx_task = -1
        self._fx_k = -1
        self._fx_arrival = 0.0

    # ------ fetch callbacks (invoked from cache.translate) ------

    def copy_from_host(self, ref, dest) -> None:
        mat = self.runtime.plan.matrices[ref.matrix_id]
        tile_host_copy_in(mat, ref, dest, self.runtime.plan.tile_size)
        start, end = self.engines.transfer(
            ref.nbytes, self.runtime.topology.host_device_bandwidth,
            self._fx_stream, self._fx_floor)
        self.dm.h2d_bytes += ref.nbytes
        self._fx_arrival = end
        self.runtime.record(TraceEvent(start, end, self.device_id,
                                       self._fx_stream, "H2D", ref.nbytes,
                                       self._fx_task, self._fx_k))

    def copy_from_peer(self, src_cache, src_blk, ref, dest) -> None:
        dest[:] = src_cache.view(src_blk)
        start, end = self.engines.transfer(
            ref.nbytes, self.runtime.topology.peer_bandwidth,
            self._fx_stream, max(self._fx_floor, src_blk.arrival))
        self.dm.d2d_in_bytes += ref.nbytes
        self.runtime.add_d2d_out(src_cache.device_id, ref.nbytes)
        self._fx_arrival = end
        self.runtime.record(TraceEvent(start, end, self.device_id,
                                       self._fx_stream, "D2D", ref.nbytes,
                                       self._fx_task, self._fx_k))

    def pressure_sync(self) -> None:
        """Drain the device and give every reader pin back, so the
        eviction scan can make progress; counted as a sync point."""
        t = self.engines.sync_streams()
        self.cache.release(self._pins)
        self._pins.clear()
        self._sync_epoch += 1
        self.runtime.record(TraceEvent(t, t, self.device_id, -1, "SYNC",
                                       0, -1, -1))

    # ------ worker state machine ------

    def ready_time(self) -> float:
        return self.engines.drain_time()

    def iterate(self) -> bool:
        """One quantum: start a batch when idle, else sweep one round."""
        if self.sweeping:
            self._sweep_round()
            return True
        if not self._refill():
            return False
        self._begin_batch()
        return True

    def _refill(self) -> bool:
        """Top the station up from the queue; steal only when starved.

        Theft is the fallback of a failed dequeue: a worker that still
        holds pending work never robs a peer, it just runs what it has.
        """
        got = False
        while self.rs.room(0) > 0:
            item = self.runtime.queue.get()
            if item is None:
                break
            task_id, release_time = item
            self.rs.put(_SlotEntry(self.runtime.plan.tasks[task_id],
                                   release_time))
            got = True
        if got or self.rs.pending_count() > 0:
            return True
        stolen = steal_for(self)
        if stolen is not None:
            self.rs.put(stolen)
            return True
        return False

    def _begin_batch(self) -> None:
        if self.engines.used:
            t = self.engines.sync_streams()
            self.runtime.record(TraceEvent(t, t, self.device_id, -1,
                                           "SYNC", 0, -1, -1))
        # reader_update: every step issued before the barrier is complete
        self.cache.release(self._pins)
        self._pins.clear()
        self._sync_epoch += 1
        self._recompute_priorities()
        for stream in range(N_STREAMS):
            entry = self.rs.pop_best()
            if entry is None:
                break
            self._activate(entry, stream)
        self.sweeping = True

    def _recompute_priorities(self) -> None:
        for entry in self.rs.entries():
            entry.priority = self._priority(entry.task)

    def _priority(self, task: Task) -> int:
        """Two points per input tile already here, one per peer copy."""
        p = 0
        contains = self.cache.contains
        peer_source = self.runtime.directory.peer_source
        l2 = self.runtime.options.l2_enabled
        for step in task.steps:
            for ref in step.input_refs():
                key = ref.key()
                if contains(key):
                    p += 2
                elif l2 and peer_source(key, self.device_id) is not None:
                    p += 1
        return p

    def _activate(self, entry: _SlotEntry, stream: int) -> None:
        task = entry.task
        slot = _ActiveSlot(entry, stream)
        out_ref = task.out_ref
        slot.c_elems = out_ref.height * out_ref.width
        slot.c_offset = self.cache.allocate_under_pressure(
            out_ref.nbytes, self)
        if task.needs_c_move_in:
            mat = self.runtime.plan.matrices[out_ref.matrix_id]
            dest = self.arena.view(slot.c_offset, slot.c_elems)
            tile_host_copy_in(mat, out_ref, dest,
                              self.runtime.plan.tile_size)
            start, end = self.engines.transfer(
                out_ref.nbytes, self.runtime.topology.host_device_bandwidth,
                stream, entry.release_time)
            self.dm.h2d_bytes += out_ref.nbytes
            self.runtime.record(TraceEvent(start, end, self.device_id,
                                           stream, "H2D", out_ref.nbytes,
                                           task.task_id, -1))
        self.active[stream] = slot

    def _sweep_round(self) -> None:
        """Issue one k-group per active slot; handle completions."""
        for stream in range(N_STREAMS):
            slot = self.active[stream]
            if slot is None:
                continue
            task = slot.entry.task
            steps = task.steps
            k = steps[slot.cursor].k
            while slot.cursor < len(steps) and steps[slot.cursor].k == k:
                self._issue_step(slot, steps[slot.cursor])
                slot.cursor += 1
            if slot.cursor == len(steps):
                self._complete(slot)
                self.active[stream] = None
                self._promote(stream)
        if all(s is None for s in self.active):
            self.sweeping = False

    def _promote(self, stream: int) -> None:
        self._recompute_priorities()
        entry = self.rs.pop_best()
        if entry is not None:
            self._activate(entry, stream)

    def _issue_step(self, slot: _ActiveSlot, step) -> None:
        task = slot.entry.task
        plan = self.runtime.plan
        refs = step.input_refs()
        c2d = buffer_as_tile(self.arena.view(slot.c_offset, slot.c_elems),
                             task.out_ref)
        if self.runtime.options.l1_enabled:
            views, arrival = self._resolve_cached(slot, step, refs)
        else:
            views, arrival, transient = self._resolve_uncached(slot, step,
                                                               refs)
        a2d = views[0]
        b2d = views[1] if len(views) > 1 else None
        apply_step_arrays(step, c2d, a2d, b2d, plan.call)
        start, end = self.engines.kernel(
            step.flops, slot.stream,
            max(arrival, slot.entry.release_time))
        self.runtime.record(TraceEvent(start, end, self.device_id,
                                       slot.stream, "KERNEL", step.flops,
                                       task.task_id, step.k))
        if not self.runtime.options.l1_enabled:
            for offset in transient:
                self.arena.free(offset)

    def _resolve_cached(self, slot, step, refs):
        """Translate the step's inputs, pinning each; if a pressure sync
        fires mid-step (stealing back earlier pins), start the step's
        translations over so all inputs are resident together."""
        for attempt in range(4):
            epoch = self._sync_epoch
            views = []
            arrival = 0.0
            restart = False
            for ref in refs:
                self._fx_stream = slot.stream
                self._fx_floor = slot.entry.release_time
                self._fx_task = slot.entry.task.task_id
                self._fx_k = step.k
                self._fx_arrival = 0.0
                blk, outcome = self.cache.translate(ref, self)
                if outcome == L1_HIT:
                    self.l1_hits += 1
                else:
                    blk.arrival = self._fx_arrival
                    if outcome == L2_HIT:
                        self.l2_hits += 1
                    else:
                        self.host_fetches += 1
                self.cache.pin(blk)
                self._pins.append(blk)
                arrival = max(arrival, blk.arrival)
                views.append(buffer_as_tile(self.cache.view(blk), ref))
                if self._sync_epoch != epoch:
                    restart = True
                    break
            if not restart:
                return views, arrival
        raise CapacityDeadlockError(
            f"device {self.device_id}: one step's tiles cannot all fit in "
            f"the arena at once; enlarge the arena or shrink the tiles")

    def _resolve_uncached(self, slot, step, refs):
        """Cache-disabled data path: every input is fetched fresh from
        the host into a transient buffer and dropped after the step."""
        views = []
        transient = []
        arrival = 0.0
        plan = self.runtime.plan
        for ref in refs:
            offset = self.cache.allocate_under_pressure(ref.nbytes, self)
            dest = self.arena.view(offset, ref.nbytes // 8)
            tile_host_copy_in(plan.matrices[ref.matrix_id], ref, dest,
                              plan.tile_size)
            start, end = self.engines.transfer(
                ref.nbytes, self.runtime.topology.host_device_bandwidth,
                slot.stream, slot.entry.release_time)
            self.dm.h2d_bytes += ref.nbytes
            self.host_fetches += 1
            self.runtime.record(TraceEvent(
                start, end, self.device_id, slot.stream, "H2D", ref.nbytes,
                slot.entry.task.task_id, step.k))
            arrival = max(arrival, end)
            views.append(buffer_as_tile(dest, ref))
            transient.append(offset)
        return views, arrival, transient

    def _complete(self, slot: _ActiveSlot) -> None:
        task = slot.entry.task
        out_ref = task.out_ref
        plan = self.runtime.plan
        buf = self.arena.view(slot.c_offset, slot.c_elems)
        tile_host_copy_out(plan.matrices[out_ref.matrix_id], out_ref, buf,
                           plan.tile_size)
        start, end = self.engines.transfer(
            out_ref.nbytes, self.runtime.topology.host_device_bandwidth,
            slot.stream, 0.0)
        self.dm.d2h_bytes += out_ref.nbytes
        self.runtime.record(TraceEvent(start, end, self.device_id,
                                       slot.stream, "D2H", out_ref.nbytes,
                                       task.task_id, -1))
        self.arena.free(slot.c_offset)
        self.runtime.directory.note_write_back(out_ref.key())
        self.tasks_done += 1
        self.runtime.complete_task(task, end)


class _HostWorker:
    """Chews whole tasks straight out of host memory: no tiles move, no
    cache exists, a task is one solid stretch of compute time."""

    def __init__(self, desc: DeviceDesc, runtime: _Runtime):
        self.desc = desc
        self.device_id = desc.device_id
        self.runtime = runtime
        self.engines = DeviceEngines(desc.device_id, desc.speed)
        self.dm = runtime.device_metrics[desc.device_id]
        self.tasks_done = 0

    def ready_time(self) -> float:
        return self.engines.compute_free

    def iterate(self) -> bool:
        item = self.runtime.queue.get()
        if item is None:
            stolen = steal_for(self)
            if stolen is None:
                return False
            item = (stolen.task.task_id, stolen.release_time)
        task_id, release_time = item
        task = self.runtime.plan.tasks[task_id]
        execute_task_on_host(task, self.runtime.plan)
        start, end = self.engines.host_task(task.flops, release_time)
        self.runtime.record(TraceEvent(start, end, self.device_id, -1,
                                       "KERNEL", task.flops, task.task_id,
                                       -1))
        self.tasks_done += 1
        self.runtime.complete_task(task, end)
        return True


def steal_for(thief):
    """Steal one pending task for ``thief`` (its queue turned up empty).

    The victim is the station with the most pending tasks (ties toward
    the lower device id); it gives up its lowest-priority task.  Stations
    holding fewer than two pending tasks are never robbed.
    """
    if len(thief.runtime.queue) > 0:
        return None
    victims = [w for w in thief.runtime.accel_workers
               if w.device_id != thief.device_id]
    victims.sort(key=lambda w: (-w.rs.pending_count(), w.device_id))
    for victim in victims:
        entry = victim.rs.steal_lowest()
        if entry is not None:
            return entry
    return None


def _finalize(runtime: _Runtime, accel_workers, host_workers) -> Metrics:
    metrics = Metrics()
    for worker in accel_workers:
        dm = worker.dm
        eng = worker.engines
        elapsed = eng.drain_time() if eng.used else 0.0
        dm.compt_seconds = sum(e - s for s, e in eng.kernel_intervals)
        dm.comm_unoverlapped_seconds = exposed_comm_time(
            eng.transfer_intervals, eng.kernel_intervals)
        dm.other_seconds = max(
            0.0, elapsed - dm.compt_seconds - dm.comm_unoverlapped_seconds)
        metrics.l1_hits += worker.l1_hits
        metrics.l2_hits += worker.l2_hits
        metrics.host_fetches += worker.host_fetches
        metrics.makespan_seconds = max(metrics.makespan_seconds, elapsed)
    for worker in host_workers:
        dm = worker.dm
        eng = worker.engines
        elapsed = eng.compute_free if eng.used else 0.0
        dm.compt_seconds = sum(e - s for s, e in eng.kernel_intervals)
        dm.other_seconds = max(0.0, elapsed - dm.compt_seconds)
        metrics.makespan_seconds = max(metrics.makespan_seconds, elapsed)
    metrics.devices = dict(runtime.device_metrics)
    return metrics


def _run_deterministic(runtime, workers) -> None:
    """Single-threaded event loop: always advance the worker whose
    engines drain earliest, so cross-device pickup order follows the
    simulated clock rather than thread luck."""
    blocked: set[int] = set()
    while not runtime.done():
        candidates = [w for w in workers if w.device_id not in blocked]
        if not candidates:
            raise RuntimeError(
                "runtime stalled: tasks remain but no worker can progress")
        worker = min(candidates, key=lambda w: (w.ready_time(),
                                                w.device_id))
        if worker.iterate():
            blocked.clear()
        else:
            blocked.add(worker.device_id)


def _run_concurrent(runtime, workers) -> None:
    import time

    errors = []
    error_lock = threading.Lock()

    def drive(worker):
        try:
            while not runtime.done():
                if not worker.iterate():
                    time.sleep(1e-5)
        except BaseException as exc:  # surface on the caller's thread
            with error_lock:
                errors.append(exc)

    threads = [threading.Thread(target=drive, args=(w,), daemon=True)
               for w in workers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]


def run_plan(plan: TaskPlan, topology: Topology,
             options: RunOptions | None = None) -> RunResult:
    """Execute an already-generated task plan on a simulated topology."""
    options = options or RunOptions()
    if options.execution not in ("deterministic", "concurrent"):
        raise ConfigError(f"unknown execution mode {options.execution!r}")
    tile_bytes = plan.tile_size * plan.tile_size * 8
    for desc in topology.accelerators():
        if desc.arena_capacity <= WORKING_SET_TILES * tile_bytes:
            raise ConfigError(
                f"device {desc.device_id}: arena of {desc.arena_capacity} "
                f"bytes cannot hold the {WORKING_SET_TILES}-tile working set "
                f"at tile size {plan.tile_size} "
                f"({WORKING_SET_TILES * tile_bytes} bytes)")
    runtime = _Runtime(plan, topology, options)
    accel_workers = [_AcceleratorWorker(d, runtime)
                     for d in topology.accelerators()]
    host_workers = [_HostWorker(d, runtime)
                    for d in topology.host_workers()]
    runtime.accel_workers = accel_workers
    workers = sorted(accel_workers + host_workers,
                     key=lambda w: w.device_id)
    if not workers:
        raise ConfigError("topology has no devices able to compute")
    if options.execution == "deterministic":
        _run_deterministic(runtime, workers)
    else:
        _run_concurrent(runtime, workers)
    metrics = _finalize(runtime, accel_workers, host_workers)
    trace = sorted(runtime.trace,
                   key=lambda e: (e.time_start, e.device, e.time_end))
    tasks_by_device = {w.device_id: w.tasks_done for w in workers}
    return RunResult(metrics, trace, tasks_by_device, plan)


def run_call(call: RoutineCall, topology: Topology,
             options: RunOptions | None = None) -> RunResult:
    """Plan and execute one routine call; the host output matrix holds
    the numerically correct result on return."""
    return run_plan(generate_tasks(call), topology, options)
