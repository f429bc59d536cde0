"""Reference tile kernels.

Each kernel updates one contiguous output tile from contiguous input
tiles.  Inputs carry their own transpose flags so the planner can hand a
physically stored tile to a kernel that needs its transpose.  ``beta == 0``
means overwrite: the previous output content is never read, so buffers may
start uninitialized.

Clarity is the contract here, not speed; an optimized backend may replace
this module as long as it passes the same oracle suite.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError, SingularMatrixError

__all__ = [
    "GEMM_UPDATE", "SYRK_UPDATE", "SYR2K_UPDATE",
    "TRSM_SOLVE", "TRMM_DIAG", "SYMM_DIAG",
    "gemm_update", "syrk_update", "syr2k_update",
    "trsm_solve", "trmm_diag", "symm_diag",
    "step_flops",
]

GEMM_UPDATE = "gemm_update"
SYRK_UPDATE = "syrk_update"
SYR2K_UPDATE = "syr2k_update"
TRSM_SOLVE = "trsm_solve"
TRMM_DIAG = "trmm_diag"
SYMM_DIAG = "symm_diag"


def _op(a: np.ndarray, trans: bool) -> np.ndarray:
    return a.T if trans else a


def _accumulate(c: np.ndarray, update: np.ndarray, beta: float) -> None:
    if beta == 0.0:
        c[:, :] = update
    elif beta == 1.0:
        c += update
    else:
        c *= beta
        c += update


def gemm_update(c, a, b, alpha, beta, trans_a=False, trans_b=False):
    """c = alpha * op(a) @ op(b) + beta * c."""
    aa = _op(a, trans_a)
    bb = _op(b, trans_b)
    if aa.shape[0] != c.shape[0] or bb.shape[1] != c.shape[1] \
            or aa.shape[1] != bb.shape[0]:
        raise InvalidArgumentError(
            f"gemm_update shapes {aa.shape} @ {bb.shape} -> {c.shape}"
        )
    _accumulate(c, alpha * (aa @ bb), beta)


def _triangle_indices(n: int, uplo: str) -> tuple[np.ndarray, np.ndarray]:
    if uplo == "upper":
        return np.triu_indices(n)
    return np.tril_indices(n)


def syrk_update(c, a, alpha, beta, uplo, trans_a=False):
    """Rank-k update of the stored triangle: c = alpha*op(a)@op(a).T + beta*c.

    Only the ``uplo`` triangle of ``c`` is read or written.
    """
    if c.shape[0] != c.shape[1]:
        raise InvalidArgumentError("syrk_update output must be square")
    aa = _op(a, trans_a)
    if aa.shape[0] != c.shape[0]:
        raise InvalidArgumentError(
            f"syrk_update shapes op(a)={aa.shape} -> c={c.shape}"
        )
    rows, cols = _triangle_indices(c.shape[0], uplo)
    full = alpha * (aa @ aa.T)
    if beta == 0.0:
        c[rows, cols] = full[rows, cols]
    else:
        c[rows, cols] = beta * c[rows, cols] + full[rows, cols]


def syr2k_update(c, a, b, alpha, beta, uplo, trans_a=False, trans_b=False):
    """c = alpha*(op(a)@op(b).T + op(b)@op(a).T) + beta*c on the stored triangle."""
    if c.shape[0] != c.shape[1]:
        raise InvalidArgumentError("syr2k_update output must be square")
    aa = _op(a, trans_a)
    bb = _op(b, trans_b)
    if aa.shape != bb.shape or aa.shape[0] != c.shape[0]:
        raise InvalidArgumentError(
            f"syr2k_update shapes op(a)={aa.shape} op(b)={bb.shape} c={c.shape}"
        )
    rows, cols = _triangle_indices(c.shape[0], uplo)
    full = alpha * (aa @ bb.T + bb @ aa.T)
    if beta == 0.0:
        c[rows, cols] = full[rows, cols]
    else:
        c[rows, cols] = beta * c[rows, cols] + full[rows, cols]


def _check_diag(e: np.ndarray) -> np.ndarray:
    d = np.diagonal(e).copy()
    if np.any(d == 0.0):
        raise SingularMatrixError("zero on a non-unit triangular diagonal")
    return d


def trsm_solve(b, a, alpha, uplo, diag, side="left", trans_a=False):
    """Substitution solve against a triangular diagonal tile, in place.

    side=left  solves op(tri(a)) @ X = alpha * b
    side=right solves X @ op(tri(a)) = alpha * b

    ``uplo`` names the stored triangle of the physical tile ``a``;
    ``trans_a`` flips the effective orientation.  Unit diag skips the
    division and never reads the stored diagonal.
    """
    if a.shape[0] != a.shape[1]:
        raise InvalidArgumentError("trsm_solve diagonal tile must be square")
    n = a.shape[0]
    expect = b.shape[0] if side == "left" else b.shape[1]
    if expect != n:
        raise InvalidArgumentError(
            f"trsm_solve tile {a.shape} against b {b.shape} side={side}"
        )
    e = _op(a, trans_a)
    eff_upper = (uplo == "upper") != trans_a
    unit = diag == "unit"
    d = None if unit else _check_diag(e)
    if alpha != 1.0:
        b *= alpha
    if side == "left":
        if eff_upper:
            for i in range(n - 1, -1, -1):
                if i + 1 < n:
                    b[i, :] -= e[i, i + 1:] @ b[i + 1:, :]
                if not unit:
                    b[i, :] /= d[i]
        else:
            for i in range(n):
                if i > 0:
                    b[i, :] -= e[i, :i] @ b[:i, :]
                if not unit:
                    b[i, :] /= d[i]
    else:
        if eff_upper:
            for j in range(n):
                if j > 0:
                    b[:, j] -= b[:, :j] @ e[:j, j]
                if not unit:
                    b[:, j] /= d[j]
        else:
            for j in range(n - 1, -1, -1):
                if j + 1 < n:
                    b[:, j] -= b[:, j + 1:] @ e[j + 1:, j]
                if not unit:
                    b[:, j] /= d[j]


def _masked_triangle(a: np.ndarray, uplo: str, diag: str, trans_a: bool) -> np.ndarray:
    e = _op(a, trans_a)
    eff_upper = (uplo == "upper") != trans_a
    m = np.triu(e) if eff_upper else np.tril(e)
    if diag == "unit":
        np.fill_diagonal(m, 1.0)
    return m


def trmm_diag(c, a, b, alpha, beta, uplo, diag, side="left", trans_a=False):
    """Diagonal-tile step of a triangular multiply.

    side=left:  c = beta*c + alpha * op(tri(a)) @ b
    side=right: c = beta*c + alpha * b @ op(tri(a))
    """
    m = _masked_triangle(a, uplo, diag, trans_a)
    prod = m @ b if side == "left" else b @ m
    if prod.shape != c.shape:
        raise InvalidArgumentError(
            f"trmm_diag shapes {prod.shape} -> {c.shape}"
        )
    _accumulate(c, alpha * prod, beta)


def _symmetrized(a: np.ndarray, uplo: str) -> np.ndarray:
    if a.shape[0] != a.shape[1]:
        raise InvalidArgumentError("symmetric diagonal tile must be square")
    if uplo == "upper":
        u = np.triu(a)
        return u + np.triu(a, 1).T
    l = np.tril(a)
    return l + np.tril(a, -1).T


def symm_diag(c, a, b, alpha, beta, uplo, side="left"):
    """Diagonal-tile step of a symmetric multiply.

    Only the stored triangle of ``a`` is read; the other half is mirrored.
    side=left:  c = beta*c + alpha * sym(a) @ b
    side=right: c = beta*c + alpha * b @ sym(a)
    """
    s = _symmetrized(a, uplo)
    prod = s @ b if side == "left" else b @ s
    if prod.shape != c.shape:
        raise InvalidArgumentError(
            f"symm_diag shapes {prod.shape} -> {c.shape}"
        )
    _accumulate(c, alpha * prod, beta)


def step_flops(kind: str, h: int, w: int, d: int) -> int:
    """Cost-model flop count for one kernel step.

    h, w are the output tile extents; d is the reduction depth (the inner
    dimension for multiplies, the triangular extent for solve/multiply
    diagonal steps).
    """
    if kind == GEMM_UPDATE or kind == SYMM_DIAG:
        return 2 * h * w * d
    if kind == SYRK_UPDATE:
        return h * (h + 1) * d
    if kind == SYR2K_UPDATE:
        return 2 * h * (h + 1) * d
    if kind == TRSM_SOLVE or kind == TRMM_DIAG:
        # d x d triangle applied to the d-extent of an h x w tile
        other = w if d == h else h
        return d * d * other
    raise InvalidArgumentError(f"unknown kernel kind {kind!r}")
