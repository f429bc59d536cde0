"""Task-plan construction: shapes, ordering, dependencies, flop model."""

import numpy as np
import pytest

from tileblas.errors import InvalidArgumentError
from tileblas.kernels import (
    GEMM_UPDATE, SYMM_DIAG, SYR2K_UPDATE, SYRK_UPDATE, TRMM_DIAG, TRSM_SOLVE,
)
from tileblas.routines import (
    degree_of_parallelism, gemm_flop_fraction, generate_tasks,
    run_plan_on_host,
)
from tileblas.oracle import dense_reference

import _reference as sref
from conftest import VARIANTS, call_from_arrays, rand, spd_diag


def build(rng, kind, *, m=12, n=12, k=12, tile_size=4, pad=0, **params):
    side = params.get("side", "left")
    q = m if side == "left" else n
    if kind == "gemm":
        a = rand(rng, *(k, m) if params.get("trans_a") else (m, k))
        b = rand(rng, *(n, k) if params.get("trans_b") else (k, n))
        c = rand(rng, m, n)
    elif kind in ("syrk", "syr2k"):
        a = rand(rng, *(k, n) if params.get("trans_a") else (n, k))
        b = rand(rng, *a.shape) if kind == "syr2k" else None
        c = rand(rng, n, n)
    elif kind == "symm":
        a, b, c = rand(rng, q, q), rand(rng, m, n), rand(rng, m, n)
    else:  # trmm / trsm
        a = spd_diag(rng, q) if kind == "trsm" else rand(rng, q, q)
        b, c = None, rand(rng, m, n)
    return call_from_arrays(kind, a=a, b=b, c=c, tile_size=tile_size,
                            pad=pad, **params)


# --- degree of parallelism ----------------------------------------------

def test_degree_of_parallelism_examples():
    assert degree_of_parallelism(8, 8, 4) == 4
    assert degree_of_parallelism(9, 8, 4) == 6      # ceil(9/4) = 3
    assert degree_of_parallelism(1, 1, 100) == 1
    assert degree_of_parallelism(100, 1, 3) == 34


def test_degree_of_parallelism_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(200):
        rows = int(rng.integers(1, 300))
        cols = int(rng.integers(1, 300))
        t = int(rng.integers(1, 64))
        count = sum(1 for r0 in range(0, rows, t) for c0 in range(0, cols, t))
        assert degree_of_parallelism(rows, cols, t) == count


def test_degree_of_parallelism_validation():
    with pytest.raises(InvalidArgumentError):
        degree_of_parallelism(0, 4, 2)
    with pytest.raises(InvalidArgumentError):
        degree_of_parallelism(4, 4, 0)


# --- plan shape ---------------------------------------------------------

def test_gemm_plan_shape(rng):
    call = build(rng, "gemm", m=12, n=8, k=16, tile_size=4, beta=0.5)
    plan = generate_tasks(call)
    assert len(plan.tasks) == 3 * 2
    for t in plan.tasks:
        assert len(t.steps) == 4                    # k tiles
        assert [s.k for s in t.steps] == [0, 1, 2, 3]
        assert all(s.kind == GEMM_UPDATE for s in t.steps)
        # beta applies exactly once, at the first step.
        assert t.steps[0].beta == 0.5
        assert all(s.beta == 1.0 for s in t.steps[1:])
        assert t.needs_c_move_in                    # beta != 0 reads C
        assert t.flops == sum(s.flops for s in t.steps)
    assert plan.total_flops == sum(t.flops for t in plan.tasks)
    # 12x8x16 gemm: 2 * m * n * k flops in total.
    assert plan.total_flops == 2 * 12 * 8 * 16


def test_gemm_beta_zero_never_moves_c_in(rng):
    plan = generate_tasks(build(rng, "gemm", beta=0.0))
    assert all(not t.needs_c_move_in for t in plan.tasks)
    assert all(t.steps[0].beta == 0.0 for t in plan.tasks)


def test_gemm_task_ids_follow_morton_order(rng):
    call = build(rng, "gemm", m=16, n=16, k=4, tile_size=4)
    plan = generate_tasks(call)
    coords = [(t.i, t.j) for t in plan.tasks]
    # Tasks are numbered in z-curve order over the 4x4 output grid: the
    # first quad is the top-left 2x2 block.
    assert set(coords[:4]) == {(0, 0), (0, 1), (1, 0), (1, 1)}
    assert set(coords[4:8]) == {(0, 2), (0, 3), (1, 2), (1, 3)}
    assert [t.task_id for t in plan.tasks] == list(range(16))
    # Z-order of (i, j) = (1, 0) interleaves to 2, after (0,0) and (0,1).
    assert coords[0] == (0, 0) and coords[1] == (0, 1)
    assert coords[2] == (1, 0) and coords[3] == (1, 1)


def test_syrk_plan_covers_stored_triangle_only(rng):
    for uplo in ("upper", "lower"):
        call = build(rng, "syrk", n=12, k=8, tile_size=4, uplo=uplo)
        plan = generate_tasks(call)
        coords = {(t.i, t.j) for t in plan.tasks}
        want = {(i, j) for i in range(3) for j in range(3)
                if (j >= i if uplo == "upper" else j <= i)}
        assert coords == want
        for t in plan.tasks:
            kinds = {s.kind for s in t.steps}
            if t.i == t.j:
                assert kinds == {SYRK_UPDATE}
            else:
                assert kinds == {GEMM_UPDATE}


def test_rank_k_diagonal_tasks_always_move_c_in(rng):
    # A diagonal task touches only the stored triangle of its tile, so the
    # untouched half must travel with the buffer even under beta == 0.
    for kind in ("syrk", "syr2k"):
        plan = generate_tasks(build(rng, kind, n=12, k=8, tile_size=4,
                                    beta=0.0))
        for t in plan.tasks:
            assert t.needs_c_move_in == (t.i == t.j)


def test_syr2k_offdiagonal_pairs_two_updates_per_k(rng):
    call = build(rng, "syr2k", n=8, k=8, tile_size=4, uplo="upper")
    plan = generate_tasks(call)
    off = [t for t in plan.tasks if t.i != t.j]
    assert off
    for t in off:
        assert len(t.steps) == 2 * 2                # two gemms per k tile
        ks = [s.k for s in t.steps]
        assert ks == sorted(ks)
        assert ks[0] == ks[1] and ks[2] == ks[3]    # same issue round
        assert t.steps[0].beta != 1.0 or call.beta == 1.0
        assert t.steps[1].beta == 1.0               # second leg accumulates
    diag = [t for t in plan.tasks if t.i == t.j]
    for t in diag:
        assert all(s.kind == SYR2K_UPDATE for s in t.steps)


def test_symm_diagonal_step_lands_at_own_index(rng):
    call = build(rng, "symm", m=12, n=8, tile_size=4, side="left")
    plan = generate_tasks(call)
    for t in plan.tasks:
        kinds = [(s.k, s.kind) for s in t.steps]
        assert len(kinds) == 3                      # k over A's 3 tile rows
        for k, kind in kinds:
            assert kind == (SYMM_DIAG if k == t.i else GEMM_UPDATE)


def test_symm_right_side_diag_follows_column(rng):
    call = build(rng, "symm", m=8, n=12, tile_size=4, side="right")
    plan = generate_tasks(call)
    for t in plan.tasks:
        for s in t.steps:
            assert s.kind == (SYMM_DIAG if s.k == t.j else GEMM_UPDATE)


@pytest.mark.parametrize("uplo,trans_a,lo_is_own", [
    ("upper", False, True),    # effective upper: row i reads k >= i
    ("lower", True, True),
    ("lower", False, False),   # effective lower: row i reads k <= i
    ("upper", True, False),
])
def test_trmm_left_k_range_follows_effective_triangle(rng, uplo, trans_a,
                                                      lo_is_own):
    call = build(rng, "trmm", m=12, n=8, tile_size=4, uplo=uplo,
                 trans_a=trans_a)
    plan = generate_tasks(call)
    for t in plan.tasks:
        ks = [s.k for s in t.steps]
        if lo_is_own:
            assert ks == list(range(t.i, 3))
        else:
            assert ks == list(range(0, t.i + 1))
        # The diagonal step sits at k == i; the rest are gemms.
        for s in t.steps:
            assert s.kind == (TRMM_DIAG if s.k == t.i else GEMM_UPDATE)
        assert t.steps[0].beta == 0.0               # overwrite semantics
        assert all(s.beta == 1.0 for s in t.steps[1:])
        assert not t.needs_c_move_in


def test_trmm_reads_snapshot_not_live_output(rng):
    call = build(rng, "trmm", m=8, n=8, tile_size=4)
    plan = generate_tasks(call)
    snapshot_ids = {mid for mid in plan.matrices if mid.endswith(".snapshot")}
    assert len(snapshot_ids) == 1
    snap_id = snapshot_ids.pop()
    for t in plan.tasks:
        for s in t.steps:
            read_ids = {r.matrix_id for r in s.input_refs()}
            assert call.c.matrix_id not in read_ids
            if s.kind == GEMM_UPDATE:
                assert snap_id in read_ids
    # No dependencies: every task may run concurrently.
    assert all(t.deps_remaining == 0 for t in plan.tasks)
    assert all(t.dependents == () for t in plan.tasks)


def test_trsm_dependency_chain_left_lower(rng):
    # Left, lower, no transpose: row i needs every solved row above it.
    call = build(rng, "trsm", m=12, n=4, tile_size=4, uplo="lower")
    plan = generate_tasks(call)
    by_coord = {(t.i, t.j): t for t in plan.tasks}
    assert by_coord[(0, 0)].deps_remaining == 0
    assert by_coord[(1, 0)].deps_remaining == 1
    assert by_coord[(2, 0)].deps_remaining == 2
    # Dependents point downward along the column.
    deps_of = {t.task_id: t.dependents for t in plan.tasks}
    id_of = {(t.i, t.j): t.task_id for t in plan.tasks}
    assert id_of[(1, 0)] in deps_of[id_of[(0, 0)]]
    assert id_of[(2, 0)] in deps_of[id_of[(0, 0)]]
    assert id_of[(2, 0)] in deps_of[id_of[(1, 0)]]
    # The solve step comes last and reads the diagonal tile of A.
    for t in plan.tasks:
        assert t.steps[-1].kind == TRSM_SOLVE
        assert t.steps[-1].a.key() == (call.a.matrix_id, t.i, t.i)
        gemms = t.steps[:-1]
        assert len(gemms) == t.i
        for s in gemms:
            assert s.kind == GEMM_UPDATE and s.alpha == -1.0
            # Gemm steps read already-solved output tiles.
            assert s.b.matrix_id == call.c.matrix_id
        assert t.needs_c_move_in                    # solves always read B


def test_trsm_alpha_lands_exactly_once(rng):
    call = build(rng, "trsm", m=12, n=4, tile_size=4, uplo="lower",
                 alpha=2.5)
    plan = generate_tasks(call)
    for t in plan.tasks:
        if len(t.steps) == 1:                       # solve only (row 0)
            assert t.steps[0].alpha == 2.5
        else:
            assert t.steps[0].beta == 2.5           # first gemm scales B
            assert all(s.beta == 1.0 for s in t.steps[1:-1])
            assert t.steps[-1].alpha == 1.0


def test_trsm_right_side_dependency_runs_along_rows(rng):
    # Right, upper, no transpose: column j needs every solved column left.
    call = build(rng, "trsm", m=4, n=12, tile_size=4, side="right")
    plan = generate_tasks(call)
    by_coord = {(t.i, t.j): t for t in plan.tasks}
    assert by_coord[(0, 0)].deps_remaining == 0
    assert by_coord[(0, 1)].deps_remaining == 1
    assert by_coord[(0, 2)].deps_remaining == 2


def test_remainder_tiles_get_remainder_flops(rng):
    # 10x10x10 at tile 4 -> edge tiles are 2 wide; flops must reflect that.
    call = build(rng, "gemm", m=10, n=10, k=10, tile_size=4)
    plan = generate_tasks(call)
    assert plan.total_flops == 2 * 10 * 10 * 10


def test_gemm_flop_fraction_pure_gemm_is_one(rng):
    plan = generate_tasks(build(rng, "gemm"))
    assert gemm_flop_fraction(plan) == 1.0


def test_gemm_flop_fraction_closed_forms(rng):
    # At p x p tiles of exact size T the fraction has a closed form:
    # syrk/syr2k: (p-1)T / ((p-1)T + T + 1); the rest: (p-1)/p.
    t = 4
    for p in (2, 3, 5):
        n = p * t
        plan = generate_tasks(build(rng, "syrk", n=n, k=n, tile_size=t))
        want = (p - 1) * t / ((p - 1) * t + t + 1)
        assert gemm_flop_fraction(plan) == pytest.approx(want, rel=1e-12)
        for kind in ("trsm", "trmm"):
            plan = generate_tasks(build(rng, kind, m=n, n=n, tile_size=t))
            assert gemm_flop_fraction(plan) == pytest.approx((p - 1) / p,
                                                             rel=1e-12)


# --- validation ---------------------------------------------------------

def test_rejects_mismatched_tile_sizes(rng):
    a = rand(rng, 8, 8)
    call = call_from_arrays("gemm", a=a, b=rand(rng, 8, 8),
                            c=rand(rng, 8, 8), tile_size=4)
    call.b = call_from_arrays("gemm", a=a, b=rand(rng, 8, 8),
                              c=rand(rng, 8, 8), tile_size=2).b
    with pytest.raises(InvalidArgumentError):
        generate_tasks(call)


def test_rejects_shape_mismatch(rng):
    call = call_from_arrays("gemm", a=rand(rng, 8, 6), b=rand(rng, 7, 8),
                            c=rand(rng, 8, 8), tile_size=4)
    with pytest.raises(InvalidArgumentError):
        generate_tasks(call)


def test_rejects_aliased_operands(rng):
    a = rand(rng, 8, 8)
    call = call_from_arrays("gemm", a=a, b=a, c=rand(rng, 8, 8), tile_size=4)
    call.b = call.a                                  # same matrix_id "A"
    with pytest.raises(InvalidArgumentError):
        generate_tasks(call)


def test_rejects_unknown_kind_and_bad_params(rng):
    ok = build(rng, "gemm")
    ok.kind = "cholesky"
    with pytest.raises(InvalidArgumentError):
        generate_tasks(ok)
    bad_uplo = build(rng, "syrk")
    bad_uplo.uplo = "middle"
    with pytest.raises(InvalidArgumentError):
        generate_tasks(bad_uplo)
    bad_side = build(rng, "trsm")
    bad_side.side = "above"
    with pytest.raises(InvalidArgumentError):
        generate_tasks(bad_side)
    bad_diag = build(rng, "trmm")
    bad_diag.diag = "zero"
    with pytest.raises(InvalidArgumentError):
        generate_tasks(bad_diag)
    # trans_b is a gemm-only knob; symm takes no transpose at all.
    tb = build(rng, "syrk")
    tb.trans_b = True
    with pytest.raises(InvalidArgumentError):
        generate_tasks(tb)
    ta = build(rng, "symm")
    ta.trans_a = True
    with pytest.raises(InvalidArgumentError):
        generate_tasks(ta)


# --- host execution route (no scheduler) --------------------------------

@pytest.mark.parametrize("kind,params", VARIANTS)
def test_host_execution_matches_oracle(rng, kind, params):
    call = build(rng, kind, m=12, n=8 if kind == "gemm" else 12, k=10,
                 tile_size=5, pad=2, **params)
    before = {name: m.as_2d().copy() for name, m in
              (("a", call.a.matrix), ("c", call.c.matrix))}
    if call.b is not None:
        before["b"] = call.b.matrix.as_2d().copy()
    plan = generate_tasks(call)
    run_plan_on_host(plan)
    expected = dense_reference(
        kind, a=before["a"], b=before.get("b"), c=before["c"],
        alpha=call.alpha, beta=call.beta, trans_a=call.trans_a,
        trans_b=call.trans_b, uplo=call.uplo, side=call.side,
        diag=call.diag)
    np.testing.assert_allclose(call.c.matrix.as_2d(), expected,
                               rtol=1e-12, atol=1e-13)
    # Inputs are never written.
    np.testing.assert_array_equal(call.a.matrix.as_2d(), before["a"])
    if call.b is not None:
        np.testing.assert_array_equal(call.b.matrix.as_2d(), before["b"])


def test_host_execution_tiny_and_tile_of_one(rng):
    call = build(rng, "gemm", m=1, n=1, k=1, tile_size=3)
    plan = generate_tasks(call)
    a, b, c = (call.a.matrix.as_2d().copy(), call.b.matrix.as_2d().copy(),
               call.c.matrix.as_2d().copy())
    run_plan_on_host(plan)
    np.testing.assert_allclose(call.c.matrix.as_2d(),
                               sref.ref_gemm(1.0, a, b, 0.0, c), rtol=1e-13)
    call2 = build(rng, "trsm", m=3, n=2, tile_size=1, uplo="lower")
    a2, c2 = call2.a.matrix.as_2d().copy(), call2.c.matrix.as_2d().copy()
    plan2 = generate_tasks(call2)
    run_plan_on_host(plan2)
    np.testing.assert_allclose(
        call2.c.matrix.as_2d(),
        sref.ref_trsm(1.0, a2, c2, "lower", "non-unit", "left", False),
        rtol=1e-12, atol=1e-13)
