"""Dense reference routines.

These compute the same level-3 operations as the tiled runtime but over
whole matrices in one shot, with no tiling, no tasks and no cache.  They
exist so that every runtime result can be checked against an independent
route.  Triangular solves go through scipy's substitution solver.

All functions take and return plain 2-d float64 arrays; none mutate their
inputs.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import InvalidArgumentError

__all__ = [
    "dense_gemm", "dense_syrk", "dense_syr2k",
    "dense_symm", "dense_trmm", "dense_trsm",
    "dense_reference",
]


def _op(a, trans):
    return a.T if trans else a


def _sym(a, uplo):
    if uplo == "upper":
        return np.triu(a) + np.triu(a, 1).T
    return np.tril(a) + np.tril(a, -1).T


def _tri(a, uplo, diag, trans):
    e = _op(a, trans)
    eff_upper = (uplo == "upper") != trans
    m = np.triu(e) if eff_upper else np.tril(e)
    if diag == "unit":
        m = m.copy()
        np.fill_diagonal(m, 1.0)
    return m, eff_upper


def dense_gemm(a, b, c, alpha, beta, trans_a=False, trans_b=False):
    return alpha * (_op(a, trans_a) @ _op(b, trans_b)) + beta * c


def _triangle_update(c, full, uplo):
    out = c.copy()
    n = c.shape[0]
    rows, cols = np.triu_indices(n) if uplo == "upper" else np.tril_indices(n)
    out[rows, cols] = full[rows, cols]
    return out


def dense_syrk(a, c, alpha, beta, uplo, trans_a=False):
    aa = _op(a, trans_a)
    full = alpha * (aa @ aa.T) + beta * c
    return _triangle_update(c, full, uplo)


def dense_syr2k(a, b, c, alpha, beta, uplo, trans_a=False):
    aa = _op(a, trans_a)
    bb = _op(b, trans_a)
    full = alpha * (aa @ bb.T + bb @ aa.T) + beta * c
    return _triangle_update(c, full, uplo)


def dense_symm(a, b, c, alpha, beta, uplo, side="left"):
    s = _sym(a, uplo)
    prod = s @ b if side == "left" else b @ s
    return alpha * prod + beta * c


def dense_trmm(a, b, alpha, uplo, diag, side="left", trans_a=False):
    m, _ = _tri(a, uplo, diag, trans_a)
    prod = m @ b if side == "left" else b @ m
    return alpha * prod


def dense_trsm(a, b, alpha, uplo, diag, side="left", trans_a=False):
    m, eff_upper = _tri(a, uplo, diag, trans_a)
    rhs = alpha * b
    if side == "left":
        return scipy.linalg.solve_triangular(
            m, rhs, lower=not eff_upper, unit_diagonal=(diag == "unit"))
    # X @ m = rhs  <=>  m.T @ X.T = rhs.T
    xt = scipy.linalg.solve_triangular(
        m.T, rhs.T, lower=eff_upper, unit_diagonal=(diag == "unit"))
    return xt.T


def dense_reference(kind, *, a, b=None, c=None, alpha=1.0, beta=0.0,
                    trans_a=False, trans_b=False, uplo="upper",
                    side="left", diag="non-unit"):
    """Dispatch by routine name; returns the expected output matrix."""
    if kind == "gemm":
        return dense_gemm(a, b, c, alpha, beta, trans_a, trans_b)
    if kind == "syrk":
        return dense_syrk(a, c, alpha, beta, uplo, trans_a)
    if kind == "syr2k":
        return dense_syr2k(a, b, c, alpha, beta, uplo, trans_a)
    if kind == "symm":
        return dense_symm(a, b, c, alpha, beta, uplo, side)
    if kind == "trmm":
        return dense_trmm(a, c, alpha, uplo, diag, side, trans_a)
    if kind == "trsm":
        return dense_trsm(a, c, alpha, uplo, diag, side, trans_a)
    raise InvalidArgumentError(f"unknown routine {kind!r}")
