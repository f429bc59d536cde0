"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from tileblas import (
    DeviceDesc, RoutineCall, RunOptions, Topology,
    dense_snapshot, oracle_result, relative_error, run_call,
)
from tileblas.devices import ACCELERATOR, HOST_COMPUTE
from tileblas.tiling import MatrixDesc, make_tiled


def rand(rng, rows, cols):
    return rng.random((rows, cols)) * 2.0 - 1.0


def spd_diag(rng, n):
    """Square matrix whose diagonal is pushed away from zero (for solves)."""
    a = rand(rng, n, n)
    d = np.diagonal(a).copy()
    np.fill_diagonal(a, np.sign(d + (d == 0)) * (1.0 + np.abs(d)))
    return a


def call_from_arrays(kind, *, a, c, b=None, tile_size, pad=0, **params):
    """Build a RoutineCall around explicit dense operands."""
    def tiled(matrix_id, arr):
        return make_tiled(MatrixDesc.from_array(matrix_id, arr, pad=pad),
                          tile_size)
    return RoutineCall(
        kind=kind,
        a=tiled("A", a),
        b=None if b is None else tiled("B", b),
        c=tiled("C", c),
        **params,
    )


def accel(device_id, speed=1.0e12, arena_capacity=256 * 2**20,
          peer_group=None):
    return DeviceDesc(device_id=device_id, kind=ACCELERATOR, speed=speed,
                      arena_capacity=arena_capacity, peer_group=peer_group)


def host(device_id, speed=1.0e11):
    return DeviceDesc(device_id=device_id, kind=HOST_COMPUTE, speed=speed,
                      arena_capacity=0, peer_group=None)


def run_and_error(call, topology, options=None):
    """Run a call, returning (RunResult, relative error vs the oracle)."""
    snapshot = dense_snapshot(call)
    result = run_call(call, topology, options or RunOptions())
    err = relative_error(call.c.matrix.as_2d(), oracle_result(call, snapshot))
    return result, err


# Every routine with a representative sweep of its parameter variants.
VARIANTS = [
    ("gemm", dict(trans_a=False, trans_b=False, alpha=1.0, beta=0.0)),
    ("gemm", dict(trans_a=True, trans_b=False, alpha=-0.7, beta=1.0)),
    ("gemm", dict(trans_a=False, trans_b=True, alpha=2.0, beta=0.3)),
    ("gemm", dict(trans_a=True, trans_b=True, alpha=1.1, beta=-0.4)),
    ("syrk", dict(uplo="upper", trans_a=False, alpha=1.0, beta=0.5)),
    ("syrk", dict(uplo="lower", trans_a=True, alpha=-1.2, beta=0.0)),
    ("syr2k", dict(uplo="upper", trans_a=True, alpha=0.9, beta=1.0)),
    ("syr2k", dict(uplo="lower", trans_a=False, alpha=1.0, beta=-0.2)),
    ("syr2k", dict(uplo="upper", trans_a=False, alpha=1.0, beta=0.0)),
    ("symm", dict(uplo="upper", side="left", alpha=1.3, beta=0.6)),
    ("symm", dict(uplo="lower", side="right", alpha=-1.0, beta=0.0)),
    ("trmm", dict(uplo="upper", side="left", trans_a=False, diag="non-unit", alpha=1.0)),
    ("trmm", dict(uplo="lower", side="left", trans_a=True, diag="unit", alpha=-0.8)),
    ("trmm", dict(uplo="upper", side="right", trans_a=True, diag="non-unit", alpha=0.5)),
    ("trmm", dict(uplo="lower", side="right", trans_a=False, diag="unit", alpha=1.0)),
    ("trsm", dict(uplo="upper", side="left", trans_a=False, diag="non-unit", alpha=1.0)),
    ("trsm", dict(uplo="lower", side="left", trans_a=True, diag="unit", alpha=-0.9)),
    ("trsm", dict(uplo="upper", side="right", trans_a=True, diag="unit", alpha=1.5)),
    ("trsm", dict(uplo="lower", side="right", trans_a=False, diag="non-unit", alpha=1.0)),
]


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
