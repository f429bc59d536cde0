"""Per-device tile cache and the cross-device coherence directory.

Each device owns a fully associative cache of host tiles backed by its
arena.  Blocks sit on a recency list (front = most recent) and carry a
reader pin count; eviction scans from the tail and takes the first block
with no readers, so tiles feeding in-flight kernels can never disappear.
Reader decrements are batched: they only happen at stream-sync points.

The directory tracks, per host tile, which devices currently cache it:
no holder means invalid, one holder exclusive, several shared.  A device
writing an output tile does not cache it at all; the write is flushed to
host immediately, so a modified state exists only for the duration of
that write-back and is never observable between operations.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import (
    ArenaOutOfMemoryError,
    CapacityDeadlockError,
    InvalidArgumentError,
    NotEvictableError,
)
from .memory import Arena

__all__ = ["LruBlock", "CoherenceDirectory", "DeviceTileCache",
           "L1_HIT", "L2_HIT", "HOST_FETCH"]

L1_HIT = "l1"
L2_HIT = "l2"
HOST_FETCH = "host"


class LruBlock:
    __slots__ = ("key", "offset", "nbytes", "reader", "arrival",
                 "prev", "next")

    def __init__(self, key, offset, nbytes):
        self.key = key
        self.offset = offset
        self.nbytes = nbytes
        self.reader = 0
        self.arrival = 0.0   # sim time at which the tile's bytes are ready
        self.prev = None
        self.next = None


class CoherenceDirectory:
    """Holder sets per host tile, shared by every device cache.

    State is derived from the holder set: empty = invalid, one = exclusive,
    two or more = shared.  Updates are atomic per key (single lock).
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._holders: dict[tuple, set[int]] = {}
        self._caches: dict[int, "DeviceTileCache"] = {}
        self._groups: dict[int, object] = {}

    def register(self, cache: "DeviceTileCache", peer_group) -> None:
        with self._lock:
            self._caches[cache.device_id] = cache
            self._groups[cache.device_id] = peer_group

    def state(self, key) -> str:
        with self._lock:
            n = len(self._holders.get(key, ()))
        if n == 0:
            return "I"
        return "E" if n == 1 else "S"

    def holders(self, key) -> frozenset:
        with self._lock:
            return frozenset(self._holders.get(key, ()))

    def add_holder(self, key, device_id: int) -> None:
        with self._lock:
            held = self._holders.setdefault(key, set())
            assert device_id not in held, \
                f"device {device_id} already holds {key}"
            held.add(device_id)

    def remove_holder(self, key, device_id: int) -> None:
        with self._lock:
            held = self._holders.get(key)
            assert held is not None and device_id in held, \
                f"device {device_id} does not hold {key}"
            held.discard(device_id)
            if not held:
                del self._holders[key]

    def peer_source(self, key, device_id: int):
        """Lowest-id holder in the asking device's peer group, or None.

        Holders outside the group are unreachable over the peer link and
        are deliberately ignored.
        """
        with self._lock:
            held = self._holders.get(key)
            if not held:
                return None
            group = self._groups.get(device_id)
            best = None
            for d in held:
                if d != device_id and self._groups.get(d) == group:
                    if best is None or d < best:
                        best = d
            return best

    def cache_of(self, device_id: int) -> "DeviceTileCache":
        return self._caches[device_id]

    def note_write_back(self, key) -> None:
        """Output flush: modified-then-invalid, collapsed to a check.

        An output tile is never cached, so by the time it is written back
        no device may hold it.
        """
        with self._lock:
            assert not self._holders.get(key), \
                f"write-back of {key} while cached by {self._holders[key]}"

    def snapshot(self) -> dict:
        with self._lock:
            return {k: frozenset(v) for k, v in self._holders.items() if v}


class DeviceTileCache:
    """Arena-backed tile cache with reader pins and LRU eviction."""

    def __init__(self, device_id: int, arena: Arena,
                 directory: CoherenceDirectory, peer_group=None,
                 l2_enabled: bool = True):
        self.device_id = device_id
        self.arena = arena
        self.directory = directory
        self.l2_enabled = l2_enabled
        self.lock = threading.Lock()
        self._blocks: dict[tuple, LruBlock] = {}
        # sentinel-free doubly linked list; _front is most recent
        self._front: LruBlock | None = None
        self._back: LruBlock | None = None
        directory.register(self, peer_group)

    # --- recency list plumbing (callers hold self.lock) ---

    def _unlink(self, blk: LruBlock) -> None:
        if blk.prev is not None:
            blk.prev.next = blk.next
        else:
            self._front = blk.next
        if blk.next is not None:
            blk.next.prev = blk.prev
        else:
            self._back = blk.prev
        blk.prev = blk.next = None

    def _push_front(self, blk: LruBlock) -> None:
        blk.prev = None
        blk.next = self._front
        if self._front is not None:
            self._front.prev = blk
        self._front = blk
        if self._back is None:
            self._back = blk

    # --- public operations ---

    def lookup(self, key) -> LruBlock | None:
        """Hit: move to front and return the block.  Miss: None."""
        with self.lock:
            blk = self._blocks.get(key)
            if blk is None:
                return None
            if blk is not self._front:
                self._unlink(blk)
                self._push_front(blk)
            return blk

    def contains(self, key) -> bool:
        """Presence probe that leaves the recency order untouched."""
        with self.lock:
            return key in self._blocks

    def evict_one(self) -> tuple:
        """Drop the least recently used unpinned block.

        Scans from the tail toward the front; returns (key, offset) of the
        victim after releasing its arena segment and directory entry.
        """
        with self.lock:
            if not self._blocks:
                raise InvalidArgumentError("evict_one on an empty cache")
            blk = self._back
            while blk is not None and blk.reader != 0:
                blk = blk.prev
            if blk is None:
                raise NotEvictableError(
                    f"device {self.device_id}: every cached tile is pinned"
                )
            self._unlink(blk)
            del self._blocks[blk.key]
            self.arena.free(blk.offset)
        self.directory.remove_holder(blk.key, self.device_id)
        return blk.key, blk.offset

    def allocate(self, nbytes: int) -> int:
        """Arena alloc with the eviction loop folded in."""
        if self.arena.aligned(nbytes) > self.arena.capacity:
            raise InvalidArgumentError(
                f"tile of {nbytes} bytes exceeds arena capacity "
                f"{self.arena.capacity}"
            )
        while True:
            try:
                return self.arena.alloc(nbytes)
            except ArenaOutOfMemoryError:
                with self.lock:
                    empty = not self._blocks
                if empty:
                    raise NotEvictableError(
                        f"device {self.device_id}: arena exhausted with no "
                        f"cached tiles to evict"
                    ) from None
                self.evict_one()

    def allocate_under_pressure(self, nbytes: int, fetch) -> int:
        """Allocate, draining in-flight pins once if eviction stalls.

        When every cached tile is pinned, the caller's in-flight work is
        synchronized (``fetch.pressure_sync()``) so completed steps give
        their readers back, then the allocation is retried exactly once.
        """
        for attempt in (0, 1):
            try:
                return self.allocate(nbytes)
            except NotEvictableError:
                if attempt == 1:
                    raise CapacityDeadlockError(
                        f"device {self.device_id}: the arena cannot hold "
                        f"the working sets of 4 concurrent tasks at this "
                        f"tile size; enlarge the arena or shrink the tiles"
                    ) from None
                fetch.pressure_sync()
        raise AssertionError("unreachable")

    def insert_front(self, key, offset: int, nbytes: int) -> LruBlock:
        with self.lock:
            if key in self._blocks:
                raise InvalidArgumentError(
                    f"device {self.device_id}: {key} already cached"
                )
            blk = LruBlock(key, offset, nbytes)
            self._blocks[key] = blk
            self._push_front(blk)
        self.directory.add_holder(key, self.device_id)
        return blk

    def pin(self, blk: LruBlock) -> None:
        with self.lock:
            blk.reader += 1

    def release(self, blocks) -> None:
        """Batched reader decrement; only called at sync points."""
        with self.lock:
            for blk in blocks:
                blk.reader -= 1
                assert blk.reader >= 0, \
                    f"reader underflow on {blk.key} (device {self.device_id})"

    def try_pin_key(self, key) -> LruBlock | None:
        """Pin by key if still cached (source side of a peer transfer)."""
        with self.lock:
            blk = self._blocks.get(key)
            if blk is None:
                return None
            blk.reader += 1
            return blk

    def unpin(self, blk: LruBlock) -> None:
        self.release((blk,))

    def view(self, blk: LruBlock) -> np.ndarray:
        return self.arena.view(blk.offset, blk.nbytes // 8)

    def translate(self, ref, fetch) -> tuple[LruBlock, str]:
        """Resolve a host tile to a device-resident block.

        ``ref`` identifies the tile (``ref.key()``, ``ref.nbytes`` and the
        physical extents used by the data path).  ``fetch`` supplies that
        data path and must provide:
          copy_from_host(ref, dest_view)
          copy_from_peer(src_cache, src_block, ref, dest_view)
          pressure_sync()  -> called once if eviction stalls on pins

        Returns (block, outcome) where outcome is L1_HIT, L2_HIT or
        HOST_FETCH.  The block is NOT pinned; callers pin what they hold.
        """
        key = ref.key()
        nbytes = ref.nbytes
        blk = self.lookup(key)
        if blk is not None:
            return blk, L1_HIT
        offset = self.allocate_under_pressure(nbytes, fetch)
        dest = self.arena.view(offset, nbytes // 8)
        outcome = HOST_FETCH
        if self.l2_enabled:
            src_id = self.directory.peer_source(key, self.device_id)
            if src_id is not None:
                src_cache = self.directory.cache_of(src_id)
                src_blk = src_cache.try_pin_key(key)
                if src_blk is not None:
                    try:
                        fetch.copy_from_peer(src_cache, src_blk, ref, dest)
                        outcome = L2_HIT
                    finally:
                        src_cache.unpin(src_blk)
        if outcome == HOST_FETCH:
            fetch.copy_from_host(ref, dest)
        blk = self.insert_front(key, offset, nbytes)
        return blk, outcome

    # --- introspection ---

    def keys(self) -> set:
        with self.lock:
            return set(self._blocks)

    def recency_order(self) -> list:
        """Keys from most to least recently used."""
        out = []
        with self.lock:
            blk = self._front
            while blk is not None:
                out.append(blk.key)
                blk = blk.next
        return out

    def check_invariants(self) -> None:
        with self.lock:
            seen = []
            blk = self._front
            prev = None
            while blk is not None:
                assert blk.prev is prev
                assert self._blocks.get(blk.key) is blk
                assert blk.reader >= 0
                seen.append(blk.key)
                prev = blk
                blk = blk.next
            assert self._back is prev
            assert len(seen) == len(self._blocks)
