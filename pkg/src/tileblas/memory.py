"""First-fit arena allocator over one contiguous device memory reservation.

The backing buffer is reserved once per arena; alloc and free only move
segment metadata around.  Segments form a doubly linked list that
partitions [0, capacity) in address order.  Allocation takes the first
free segment large enough and splits off the remainder; free coalesces
with free neighbors so adjacent free segments never persist.
"""

from __future__ import annotations

import numpy as np

from .errors import ArenaOutOfMemoryError, InvalidArgumentError, InvalidFreeError

__all__ = ["Arena", "ALIGNMENT"]

ALIGNMENT = 64  # bytes; multiple of the 8-byte element size


class _Segment:
    __slots__ = ("offset", "length", "occupied", "prev", "next")

    def __init__(self, offset, length, occupied):
        self.offset = offset
        self.length = length
        self.occupied = occupied
        self.prev = None
        self.next = None


class Arena:
    """Byte-granular allocator with a float64 backing buffer.

    Offsets and lengths are in bytes.  The default alignment keeps every
    allocation 64-byte aligned so float64 tiles sit at natural alignment;
    tests that exercise the abstract allocator behavior can pass
    ``alignment=1`` to get unrounded sizes.
    """

    def __init__(self, capacity: int, alignment: int = ALIGNMENT):
        if alignment < 1:
            raise InvalidArgumentError(f"alignment must be >= 1, got {alignment}")
        if capacity < alignment:
            raise InvalidArgumentError(
                f"arena capacity must be >= alignment ({alignment}), got {capacity}"
            )
        self.capacity = capacity
        self.alignment = alignment
        self._backing = np.empty((capacity + 7) // 8, dtype=np.float64)
        self.reservations = 1  # backing reservations made over the arena's life
        head = _Segment(0, capacity, False)
        self._head = head
        self._occupied: dict[int, _Segment] = {}

    def aligned(self, nbytes: int) -> int:
        return (nbytes + self.alignment - 1) // self.alignment * self.alignment

    def alloc(self, nbytes: int) -> int:
        """First-fit allocation; returns the byte offset.

        Raises ArenaOutOfMemoryError when no free segment fits.  That is a
        recoverable signal, not a crash: callers evict and retry.
        """
        if nbytes < 1:
            raise InvalidArgumentError(f"alloc size must be >= 1, got {nbytes}")
        size = self.aligned(nbytes)
        node = self._head
        while node is not None:
            if not node.occupied and node.length >= size:
                if node.length > size:
                    rest = _Segment(node.offset + size, node.length - size, False)
                    rest.prev = node
                    rest.next = node.next
                    if node.next is not None:
                        node.next.prev = rest
                    node.next = rest
                    node.length = size
                node.occupied = True
                self._occupied[node.offset] = node
                return node.offset
            node = node.next
        raise ArenaOutOfMemoryError(
            f"no free segment of {size} bytes (capacity {self.capacity})"
        )

    def free(self, offset: int) -> None:
        """Release an allocation and coalesce with free neighbors."""
        node = self._occupied.pop(offset, None)
        if node is None:
            raise InvalidFreeError(f"offset {offset} is not an allocation start")
        node.occupied = False
        nxt = node.next
        if nxt is not None and not nxt.occupied:
            node.length += nxt.length
            node.next = nxt.next
            if nxt.next is not None:
                nxt.next.prev = node
        prv = node.prev
        if prv is not None and not prv.occupied:
            prv.length += node.length
            prv.next = node.next
            if node.next is not None:
                node.next.prev = prv

    def view(self, offset: int, n_elements: int) -> np.ndarray:
        """Flat float64 view into an allocation."""
        if offset % 8 != 0:
            raise InvalidArgumentError(
                f"offset {offset} is not element-aligned; views need 8-byte offsets"
            )
        start = offset // 8
        return self._backing[start:start + n_elements]

    # --- introspection (tests and invariant checks) ---

    def segments(self) -> list[tuple[int, int, bool]]:
        out = []
        node = self._head
        while node is not None:
            out.append((node.offset, node.length, node.occupied))
            node = node.next
        return out

    def free_segments(self) -> list[tuple[int, int]]:
        """Free segments in address order."""
        return [(o, l) for o, l, occ in self.segments() if not occ]

    def occupied_bytes(self) -> int:
        return sum(l for _, l, occ in self.segments() if occ)

    def check_invariants(self) -> None:
        segs = self.segments()
        pos = 0
        prev_free = False
        for off, length, occ in segs:
            assert off == pos, f"segment gap/overlap at {off} (expected {pos})"
            assert length > 0, f"empty segment at {off}"
            if occ:
                assert length % self.alignment == 0, \
                    f"occupied segment length {length} not aligned"
            assert not (prev_free and not occ), \
                f"adjacent free segments at {off}"
            if occ:
                assert self._occupied.get(off) is not None, \
                    f"occupied segment {off} missing from index"
            else:
                assert off not in self._occupied, \
                    f"free segment {off} present in occupied index"
            prev_free = not occ
            pos += length
        assert pos == self.capacity, f"partition ends at {pos}, not capacity"
        assert len(self._occupied) == sum(1 for _, _, occ in segs if occ)
