"""Seeded operand construction and the oracle bridge for whole calls.

Matrices are filled with uniform values in [-1, 1].  Triangular solve
operands get their diagonal pushed away from zero (magnitude in [1, 2])
so systems stay comfortably well-conditioned.  Matrices that only
reference one triangle (symmetric or triangular operands) are kept fully
random on purpose: the unreferenced half is garbage, so any kernel that
wrongly reads it shows up as a verification failure.

Leading dimensions are padded by a few seeded rows now and then, which
keeps the strided host layout honest.
"""

from __future__ import annotations

import numpy as np

from .oracle import dense_reference
from .routines import RoutineCall
from .tiling import MatrixDesc, make_tiled

__all__ = ["build_call", "dense_snapshot", "oracle_result",
           "relative_error"]


def _random_matrix(rng, rows: int, cols: int):
    return (rng.random((rows, cols)) * 2.0 - 1.0)


def _tiled(rng, matrix_id: str, array, tile_size: int):
    pad = int(rng.integers(0, 4))
    desc = MatrixDesc.from_array(matrix_id, array, pad=pad)
    return make_tiled(desc, tile_size)


def build_call(kind: str, *, m: int, n: int, k: int, tile_size: int,
               seed: int, alpha: float = 1.0, beta: float = 0.0,
               trans_a: bool = False, trans_b: bool = False,
               uplo: str = "upper", side: str = "left",
               diag: str = "non-unit") -> RoutineCall:
    """Build a routine call with freshly generated seeded operands."""
    rng = np.random.default_rng(seed)
    q = m if side == "left" else n

    if kind == "gemm":
        a = _random_matrix(rng, *(k, m) if trans_a else (m, k))
        b = _random_matrix(rng, *(n, k) if trans_b else (k, n))
        c = _random_matrix(rng, m, n)
    elif kind in ("syrk", "syr2k"):
        a = _random_matrix(rng, *(k, n) if trans_a else (n, k))
        b = _random_matrix(rng, *a.shape) if kind == "syr2k" else None
        c = _random_matrix(rng, n, n)
    elif kind == "symm":
        a = _random_matrix(rng, q, q)
        b = _random_matrix(rng, m, n)
        c = _random_matrix(rng, m, n)
    elif kind in ("trmm", "trsm"):
        a = _random_matrix(rng, q, q)
        if kind == "trsm" and diag == "non-unit":
            d = np.diagonal(a).copy()
            np.fill_diagonal(a, np.sign(d + (d == 0)) * (1.0 + np.abs(d)))
        b = None
        c = _random_matrix(rng, m, n)
    else:
        raise ValueError(f"unknown routine {kind!r}")

    return RoutineCall(
        kind=kind,
        a=_tiled(rng, "A", a, tile_size),
        b=None if b is None else _tiled(rng, "B", b, tile_size),
        c=_tiled(rng, "C", c, tile_size),
        alpha=alpha, beta=beta, trans_a=trans_a, trans_b=trans_b,
        uplo=uplo, side=side, diag=diag,
    )


def dense_snapshot(call: RoutineCall) -> dict:
    """Dense copies of the call's operands, taken before execution."""
    snap = {"a": call.a.matrix.as_2d().copy(),
            "c": call.c.matrix.as_2d().copy()}
    if call.b is not None:
        snap["b"] = call.b.matrix.as_2d().copy()
    return snap


def oracle_result(call: RoutineCall, snapshot: dict) -> np.ndarray:
    """What the output matrix should hold, by the dense reference."""
    return dense_reference(
        call.kind, a=snapshot["a"], b=snapshot.get("b"), c=snapshot["c"],
        alpha=call.alpha, beta=call.beta, trans_a=call.trans_a,
        trans_b=call.trans_b, uplo=call.uplo, side=call.side,
        diag=call.diag)


def relative_error(result: np.ndarray, expected: np.ndarray) -> float:
    scale = np.linalg.norm(expected)
    if scale == 0.0:
        return float(np.linalg.norm(result))
    return float(np.linalg.norm(result - expected) / scale)
