"""Host matrix descriptors and the tile coordinate system.

Matrices live in column-major host storage with an explicit leading
dimension, so a descriptor can alias a sub-panel of a larger buffer.
Tiling splits a matrix into T x T squares plus smaller edge tiles; a
``TileRef`` names one tile, and a transposed ``TileRef`` points at the
same physical storage with a flag telling the consumer to read it
transposed.  Two refs denote the same host region exactly when their
``key()`` values match, regardless of the transposed flag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "MatrixDesc",
    "TiledMatrix",
    "TileRef",
    "make_tiled",
    "logical_tile",
    "transpose_ref",
    "tile_view",
    "tile_host_copy_in",
    "tile_host_copy_out",
    "buffer_as_tile",
]


@dataclass
class MatrixDesc:
    """Column-major host matrix: element (r, c) sits at
    ``storage[base_offset + r + c * leading_dim]``."""

    matrix_id: str
    rows: int
    cols: int
    leading_dim: int
    storage: np.ndarray
    base_offset: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidArgumentError(
                f"matrix {self.matrix_id!r}: rows and cols must be >= 1"
            )
        if self.leading_dim < self.rows:
            raise InvalidArgumentError(
                f"matrix {self.matrix_id!r}: leading_dim {self.leading_dim} "
                f"< rows {self.rows}"
            )
        if self.storage.ndim != 1 or self.storage.dtype != np.float64:
            raise InvalidArgumentError(
                f"matrix {self.matrix_id!r}: storage must be a 1-d float64 buffer"
            )
        need = self.base_offset + self.leading_dim * self.cols
        if self.base_offset < 0 or need > self.storage.size:
            raise InvalidArgumentError(
                f"matrix {self.matrix_id!r}: storage holds {self.storage.size} "
                f"elements, needs {need}"
            )

    @classmethod
    def from_array(cls, matrix_id: str, array: np.ndarray, pad: int = 0) -> "MatrixDesc":
        """Copy a 2-d array into fresh column-major storage.

        ``pad`` adds extra rows to the leading dimension, which keeps the
        leading_dim > rows code paths honest in tests.
        """
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 2:
            raise InvalidArgumentError("from_array expects a 2-d array")
        rows, cols = array.shape
        ld = rows + pad
        storage = np.zeros(ld * cols, dtype=np.float64)
        view = storage.reshape((cols, ld)).T  # column-major (ld, cols) view
        view[:rows, :] = array
        return cls(matrix_id, rows, cols, ld, storage)

    def as_2d(self) -> np.ndarray:
        """Zero-copy (rows, cols) view of the described region."""
        flat = self.storage[self.base_offset:self.base_offset + self.leading_dim * self.cols]
        return flat.reshape((self.cols, self.leading_dim)).T[: self.rows, :]


class TileRef(NamedTuple):
    """One tile of a tiled matrix.

    ``i``/``j`` index the physical tile grid.  ``height``/``width`` are the
    dimensions the consumer sees: the physical tile extent, swapped when
    ``transposed`` is set.
    """

    matrix_id: str
    i: int
    j: int
    height: int
    width: int
    transposed: bool

    def key(self) -> tuple:
        """Canonical identifier of the backing host region."""
        return (self.matrix_id, self.i, self.j)

    @property
    def phys_height(self) -> int:
        return self.width if self.transposed else self.height

    @property
    def phys_width(self) -> int:
        return self.height if self.transposed else self.width

    @property
    def nbytes(self) -> int:
        return self.height * self.width * 8


@dataclass
class TiledMatrix:
    matrix: MatrixDesc
    tile_size: int
    tile_rows: int
    tile_cols: int

    @property
    def matrix_id(self) -> str:
        return self.matrix.matrix_id


def make_tiled(matrix: MatrixDesc, tile_size: int) -> TiledMatrix:
    if tile_size < 1:
        raise InvalidArgumentError(f"tile_size must be >= 1, got {tile_size}")
    tr = -(-matrix.rows // tile_size)
    tc = -(-matrix.cols // tile_size)
    return TiledMatrix(matrix, tile_size, tr, tc)


def _tile_extent(tm: TiledMatrix, i: int, j: int) -> tuple[int, int]:
    t = tm.tile_size
    h = min(t, tm.matrix.rows - i * t)
    w = min(t, tm.matrix.cols - j * t)
    return h, w


def logical_tile(tm: TiledMatrix, i: int, j: int, trans: bool = False) -> TileRef:
    """Tile (i, j) of the matrix, or of its transpose when ``trans`` is set.

    Under ``trans`` the logical index (i, j) maps to physical tile (j, i)
    with the transposed flag raised; kernels apply the element transpose.
    """
    rows = tm.tile_cols if trans else tm.tile_rows
    cols = tm.tile_rows if trans else tm.tile_cols
    if not (0 <= i < rows and 0 <= j < cols):
        raise InvalidArgumentError(
            f"tile index ({i}, {j}) out of range for "
            f"{rows}x{cols} logical grid of {tm.matrix_id!r}"
        )
    if trans:
        ph, pw = _tile_extent(tm, j, i)
        return TileRef(tm.matrix_id, j, i, pw, ph, True)
    ph, pw = _tile_extent(tm, i, j)
    return TileRef(tm.matrix_id, i, j, ph, pw, False)


def transpose_ref(ref: TileRef) -> TileRef:
    """Flip the transposed flag; the physical tile is unchanged."""
    return TileRef(ref.matrix_id, ref.i, ref.j, ref.width, ref.height,
                   not ref.transposed)


def tile_view(matrix: MatrixDesc, ref: TileRef, tile_size: int) -> np.ndarray:
    """Zero-copy view of the physical tile (untransposed orientation)."""
    if matrix.matrix_id != ref.matrix_id:
        raise InvalidArgumentError(
            f"descriptor {matrix.matrix_id!r} does not match ref {ref.matrix_id!r}"
        )
    r0 = ref.i * tile_size
    c0 = ref.j * tile_size
    return matrix.as_2d()[r0:r0 + ref.phys_height, c0:c0 + ref.phys_width]


def _as_f2d(buf: np.ndarray, h: int, w: int) -> np.ndarray:
    # Column-major (h, w) view over the first h*w elements of a flat buffer.
    return buf[: h * w].reshape((w, h)).T


def tile_host_copy_in(matrix: MatrixDesc, ref: TileRef, dest: np.ndarray,
                      tile_size: int) -> None:
    """Copy the physical tile into a contiguous column-major buffer.

    The copy is always in physical orientation; a transposed ref is
    handled by whichever kernel consumes the buffer.
    """
    h, w = ref.phys_height, ref.phys_width
    if dest.size < h * w:
        raise InvalidArgumentError(
            f"destination holds {dest.size} elements, tile needs {h * w}"
        )
    _as_f2d(dest, h, w)[:, :] = tile_view(matrix, ref, tile_size)


def tile_host_copy_out(matrix: MatrixDesc, ref: TileRef, src: np.ndarray,
                       tile_size: int) -> None:
    """Inverse of :func:`tile_host_copy_in`."""
    h, w = ref.phys_height, ref.phys_width
    if src.size < h * w:
        raise InvalidArgumentError(
            f"source holds {src.size} elements, tile needs {h * w}"
        )
    tile_view(matrix, ref, tile_size)[:, :] = _as_f2d(src, h, w)


def buffer_as_tile(buf: np.ndarray, ref: TileRef) -> np.ndarray:
    """2-d physical-orientation view over a contiguous tile buffer."""
    return _as_f2d(buf, ref.phys_height, ref.phys_width)
