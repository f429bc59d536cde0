"""Routine calls and their decomposition into tile tasks.

A task computes one output tile C_ij.  Its steps walk the reduction
dimension in ascending k; each step names the tiles it reads, the kernel
that combines them and the scalars to apply.  beta is applied exactly
once, on the task's first step; every later step accumulates with
beta = 1.

All transpose / uplo / side variants reduce to index remapping through
``logical_tile`` rather than separate code paths: a step that needs the
transpose of a stored tile carries a ref whose transposed flag tells the
kernel to read it flipped.

Triangular solves are the one place with real inter-task dependencies:
the task for C_ij consumes solved tiles produced by other tasks of the
same call, so those edges are recorded and a task only becomes runnable
once its producers have written back.  Triangular multiplies instead read
a snapshot of the input matrix taken when the plan is built, because the
routine overwrites its input in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import InvalidArgumentError
from .kernels import (
    GEMM_UPDATE, SYMM_DIAG, SYR2K_UPDATE, SYRK_UPDATE, TRMM_DIAG, TRSM_SOLVE,
    step_flops,
)
from .tiling import (
    MatrixDesc, TiledMatrix, TileRef, logical_tile, make_tiled, tile_view,
    transpose_ref,
)

__all__ = [
    "ROUTINES", "RoutineCall", "TaskStep", "Task", "TaskPlan",
    "degree_of_parallelism", "generate_tasks", "gemm_flop_fraction",
    "execute_task_on_host", "run_plan_on_host", "apply_step_arrays",
]

ROUTINES = ("gemm", "syrk", "syr2k", "symm", "trmm", "trsm")


@dataclass
class RoutineCall:
    """One level-3 call over tiled operands.

    ``c`` is always the output matrix.  For trmm/trsm the multiplied /
    solved matrix is the output, so it lives in ``c`` and ``b`` is None.
    """

    kind: str
    a: TiledMatrix
    c: TiledMatrix
    b: Optional[TiledMatrix] = None
    alpha: float = 1.0
    beta: float = 0.0
    trans_a: bool = False
    trans_b: bool = False
    uplo: str = "upper"
    side: str = "left"
    diag: str = "non-unit"


class TaskStep(NamedTuple):
    k: int
    kind: str
    a: TileRef                 # left operand (or the diagonal tile)
    b: Optional[TileRef]       # right operand; None for syrk/solve steps
    alpha: float
    beta: float
    flops: int

    def input_refs(self):
        return (self.a,) if self.b is None else (self.a, self.b)


@dataclass
class Task:
    task_id: int
    i: int
    j: int
    out_ref: TileRef
    steps: tuple[TaskStep, ...]
    flops: int
    needs_c_move_in: bool
    deps_remaining: int = 0
    dependents: tuple[int, ...] = ()

    @property
    def k_lo(self) -> int:
        return self.steps[0].k

    @property
    def k_hi(self) -> int:
        return self.steps[-1].k


@dataclass
class TaskPlan:
    call: RoutineCall
    tile_size: int
    tasks: list[Task]
    matrices: dict[str, MatrixDesc]
    total_flops: int = 0

    def initially_ready(self) -> list[Task]:
        return [t for t in self.tasks if t.deps_remaining == 0]


def degree_of_parallelism(rows: int, cols: int, tile_size: int) -> int:
    """Number of independent output-tile tasks for a rows x cols output."""
    if rows < 1 or cols < 1 or tile_size < 1:
        raise InvalidArgumentError("rows, cols and tile_size must be >= 1")
    return (-(-rows // tile_size)) * (-(-cols // tile_size))


def _morton(i: int, j: int) -> int:
    key = 0
    bit = 0
    while i or j:
        key |= ((j & 1) << (2 * bit)) | ((i & 1) << (2 * bit + 1))
        i >>= 1
        j >>= 1
        bit += 1
    return key


def _grid_order(pairs) -> list[tuple[int, int]]:
    # Z-order keeps successive tasks inside small 2-d blocks of the output
    # grid, which is what lets panel tiles stay cached between tasks.
    return sorted(pairs, key=lambda p: _morton(p[0], p[1]))


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise InvalidArgumentError(msg)


def _validate(call: RoutineCall) -> None:
    _check(call.kind in ROUTINES, f"unknown routine {call.kind!r}")
    _check(call.uplo in ("upper", "lower"), f"bad uplo {call.uplo!r}")
    _check(call.side in ("left", "right"), f"bad side {call.side!r}")
    _check(call.diag in ("unit", "non-unit"), f"bad diag {call.diag!r}")
    if call.kind != "gemm":
        _check(not call.trans_b,
               f"{call.kind} has a single transpose switch; trans_b "
               f"does not apply")
    if call.kind == "symm":
        _check(not call.trans_a, "symm does not take a transpose")
    operands = [call.a, call.c] + ([call.b] if call.b is not None else [])
    t = call.c.tile_size
    ids = set()
    for tm in operands:
        _check(tm.tile_size == t, "operands tiled with different tile sizes")
        _check(tm.matrix_id not in ids,
               f"operands alias matrix {tm.matrix_id!r}")
        ids.add(tm.matrix_id)
    m, n = call.c.matrix.rows, call.c.matrix.cols
    a_r, a_c = call.a.matrix.rows, call.a.matrix.cols

    if call.kind == "gemm":
        _check(call.b is not None, "gemm needs a b operand")
        op_a = (a_c, a_r) if call.trans_a else (a_r, a_c)
        b_r, b_c = call.b.matrix.rows, call.b.matrix.cols
        op_b = (b_c, b_r) if call.trans_b else (b_r, b_c)
        _check(op_a[0] == m and op_b[1] == n and op_a[1] == op_b[0],
               f"gemm shapes op(a)={op_a} op(b)={op_b} c=({m},{n})")
    elif call.kind in ("syrk", "syr2k"):
        _check(m == n, "rank-k output must be square")
        op_a = (a_c, a_r) if call.trans_a else (a_r, a_c)
        _check(op_a[0] == n, f"op(a) rows {op_a[0]} != output order {n}")
        if call.kind == "syr2k":
            _check(call.b is not None, "syr2k needs a b operand")
            _check((call.b.matrix.rows, call.b.matrix.cols) == (a_r, a_c),
                   "syr2k operands a and b must have identical shape")
        else:
            _check(call.b is None, "syrk takes no b operand")
    elif call.kind == "symm":
        _check(call.b is not None, "symm needs a b operand")
        order = m if call.side == "left" else n
        _check(a_r == a_c == order,
               f"symmetric operand must be {order}x{order}, got {a_r}x{a_c}")
        _check((call.b.matrix.rows, call.b.matrix.cols) == (m, n),
               "symm b operand must match the output shape")
    else:  # trmm / trsm operate in place on c
        _check(call.b is None, f"{call.kind} takes no separate b operand")
        order = m if call.side == "left" else n
        _check(a_r == a_c == order,
               f"triangular operand must be {order}x{order}, got {a_r}x{a_c}")


def _inner_tiles(tm: TiledMatrix, trans: bool) -> int:
    """Tile count of the reduction dimension of op(tm)."""
    return tm.tile_rows if trans else tm.tile_cols


class _Builder:
    def __init__(self, call: RoutineCall):
        self.call = call
        self.out = call.c
        self.t = call.c.tile_size
        self.steps: list[TaskStep] = []
        self.first = True

    def _beta0(self) -> float:
        if self.first:
            self.first = False
            return self.call.beta
        return 1.0

    def add(self, k, kind, a_ref, b_ref, alpha, beta, h, w, d):
        self.steps.append(TaskStep(
            k, kind, a_ref, b_ref, alpha, beta, step_flops(kind, h, w, d)))

    def build(self, task_id, i, j, needs_c) -> Task:
        out_ref = logical_tile(self.out, i, j, False)
        flops = sum(s.flops for s in self.steps)
        return Task(task_id, i, j, out_ref, tuple(self.steps), flops, needs_c)


def _plan_gemm(call, i, j, task_id) -> Task:
    b = _Builder(call)
    out_ref = logical_tile(call.c, i, j, False)
    h, w = out_ref.height, out_ref.width
    for k in range(_inner_tiles(call.a, call.trans_a)):
        a_ref = logical_tile(call.a, i, k, call.trans_a)
        b_ref = logical_tile(call.b, k, j, call.trans_b)
        b.add(k, GEMM_UPDATE, a_ref, b_ref, call.alpha, b._beta0(),
              h, w, a_ref.width)
    return b.build(task_id, i, j, call.beta != 0.0)


def _plan_syrk(call, i, j, task_id) -> Task:
    b = _Builder(call)
    out_ref = logical_tile(call.c, i, j, False)
    h, w = out_ref.height, out_ref.width
    for k in range(_inner_tiles(call.a, call.trans_a)):
        a_ref = logical_tile(call.a, i, k, call.trans_a)
        if i == j:
            b.add(k, SYRK_UPDATE, a_ref, None, call.alpha, b._beta0(),
                  h, w, a_ref.width)
        else:
            bt = transpose_ref(logical_tile(call.a, j, k, call.trans_a))
            b.add(k, GEMM_UPDATE, a_ref, bt, call.alpha, b._beta0(),
                  h, w, a_ref.width)
    # Diagonal tasks update only the stored triangle, so the rest of the
    # tile must ride along through the device buffer even when beta == 0.
    return b.build(task_id, i, j, call.beta != 0.0 or i == j)


def _plan_syr2k(call, i, j, task_id) -> Task:
    b = _Builder(call)
    out_ref = logical_tile(call.c, i, j, False)
    h, w = out_ref.height, out_ref.width
    for k in range(_inner_tiles(call.a, call.trans_a)):
        a_ref = logical_tile(call.a, i, k, call.trans_a)
        b_ref = logical_tile(call.b, i, k, call.trans_a)
        if i == j:
            b.add(k, SYR2K_UPDATE, a_ref, b_ref, call.alpha, b._beta0(),
                  h, w, a_ref.width)
        else:
            b.add(k, GEMM_UPDATE, a_ref,
                  transpose_ref(logical_tile(call.b, j, k, call.trans_a)),
                  call.alpha, b._beta0(), h, w, a_ref.width)
            b.add(k, GEMM_UPDATE, b_ref,
                  transpose_ref(logical_tile(call.a, j, k, call.trans_a)),
                  call.alpha, 1.0, h, w, b_ref.width)
    # Same partial-tile consideration as the rank-k diagonal tasks.
    return b.build(task_id, i, j, call.beta != 0.0 or i == j)


def _sym_part(call, r, c) -> TileRef:
    """Tile (r, c) of the full symmetric extension of the stored triangle."""
    stored = (c > r) if call.uplo == "upper" else (c < r)
    if stored:
        return logical_tile(call.a, r, c, False)
    return transpose_ref(logical_tile(call.a, c, r, False))


def _plan_symm(call, i, j, task_id) -> Task:
    b = _Builder(call)
    out_ref = logical_tile(call.c, i, j, False)
    h, w = out_ref.height, out_ref.width
    if call.side == "left":
        for k in range(call.a.tile_rows):
            b_ref = logical_tile(call.b, k, j, False)
            if k == i:
                diag = logical_tile(call.a, i, i, False)
                b.add(k, SYMM_DIAG, diag, b_ref, call.alpha, b._beta0(),
                      h, w, diag.height)
            else:
                a_ref = _sym_part(call, i, k)
                b.add(k, GEMM_UPDATE, a_ref, b_ref, call.alpha, b._beta0(),
                      h, w, a_ref.width)
    else:
        for k in range(call.a.tile_rows):
            a_ref = logical_tile(call.b, i, k, False)
            if k == j:
                diag = logical_tile(call.a, j, j, False)
                b.add(k, SYMM_DIAG, diag, a_ref, call.alpha, b._beta0(),
                      h, w, diag.height)
            else:
                b.add(k, GEMM_UPDATE, a_ref, _sym_part(call, k, j),
                      call.alpha, b._beta0(), h, w, a_ref.width)
    return b.build(task_id, i, j, call.beta != 0.0)


def _eff_upper(call) -> bool:
    return (call.uplo == "upper") != call.trans_a


def _plan_trmm(call, i, j, task_id, snap: TiledMatrix) -> Task:
    b = _Builder(call)
    out_ref = logical_tile(call.c, i, j, False)
    h, w = out_ref.height, out_ref.width
    if call.side == "left":
        ks = range(i, call.a.tile_rows) if _eff_upper(call) else range(0, i + 1)
        diag_k = i
    else:
        ks = range(0, j + 1) if _eff_upper(call) else range(j, call.a.tile_rows)
        diag_k = j
    first = True
    for k in ks:
        beta = 0.0 if first else 1.0
        first = False
        if k == diag_k:
            diag = logical_tile(call.a, diag_k, diag_k, False)
            b.add(k, TRMM_DIAG, diag, logical_tile(snap, i, j, False),
                  call.alpha, beta, h, w, diag.height)
        elif call.side == "left":
            a_ref = logical_tile(call.a, i, k, call.trans_a)
            b.add(k, GEMM_UPDATE, a_ref, logical_tile(snap, k, j, False),
                  call.alpha, beta, h, w, a_ref.width)
        else:
            s_ref = logical_tile(snap, i, k, False)
            b.add(k, GEMM_UPDATE, s_ref,
                  logical_tile(call.a, k, j, call.trans_a),
                  call.alpha, beta, h, w, s_ref.width)
    return b.build(task_id, i, j, False)


def _trsm_gemm_ks(call, i, j) -> range:
    if call.side == "left":
        mt = call.a.tile_rows
        return range(i + 1, mt) if _eff_upper(call) else range(0, i)
    nt = call.a.tile_rows
    return range(0, j) if _eff_upper(call) else range(j + 1, nt)


def _plan_trsm(call, i, j, task_id) -> Task:
    b = _Builder(call)
    out_ref = logical_tile(call.c, i, j, False)
    h, w = out_ref.height, out_ref.width
    ks = _trsm_gemm_ks(call, i, j)
    first = True
    for k in ks:
        beta = call.alpha if first else 1.0
        first = False
        if call.side == "left":
            a_ref = logical_tile(call.a, i, k, call.trans_a)
            b.add(k, GEMM_UPDATE, a_ref, logical_tile(call.c, k, j, False),
                  -1.0, beta, h, w, a_ref.width)
        else:
            x_ref = logical_tile(call.c, i, k, False)
            b.add(k, GEMM_UPDATE, x_ref,
                  logical_tile(call.a, k, j, call.trans_a),
                  -1.0, beta, h, w, x_ref.width)
    diag_k = i if call.side == "left" else j
    diag = logical_tile(call.a, diag_k, diag_k, False)
    solve_alpha = call.alpha if first else 1.0
    d = diag.height
    b.add(diag_k, TRSM_SOLVE, diag, None, solve_alpha, 1.0,
          h, w, d)
    return b.build(task_id, i, j, True)


def generate_tasks(call: RoutineCall) -> TaskPlan:
    """Expand a routine call into its full tile-task plan."""
    _validate(call)
    t = call.c.tile_size
    mt, nt = call.c.tile_rows, call.c.tile_cols
    matrices = {call.a.matrix_id: call.a.matrix,
                call.c.matrix_id: call.c.matrix}
    if call.b is not None:
        matrices[call.b.matrix_id] = call.b.matrix

    snap = None
    if call.kind == "trmm":
        src = call.c.matrix
        snap_desc = MatrixDesc(src.matrix_id + ".snapshot", src.rows, src.cols,
                               src.leading_dim, src.storage.copy(),
                               src.base_offset)
        snap = TiledMatrix(snap_desc, t, mt, nt)
        matrices[snap_desc.matrix_id] = snap_desc

    if call.kind in ("syrk", "syr2k"):
        if call.uplo == "upper":
            pairs = [(i, j) for i in range(mt) for j in range(i, nt)]
        else:
            pairs = [(i, j) for i in range(mt) for j in range(0, i + 1)]
    else:
        pairs = [(i, j) for i in range(mt) for j in range(nt)]

    tasks: list[Task] = []
    for task_id, (i, j) in enumerate(_grid_order(pairs)):
        if call.kind == "gemm":
            task = _plan_gemm(call, i, j, task_id)
        elif call.kind == "syrk":
            task = _plan_syrk(call, i, j, task_id)
        elif call.kind == "syr2k":
            task = _plan_syr2k(call, i, j, task_id)
        elif call.kind == "symm":
            task = _plan_symm(call, i, j, task_id)
        elif call.kind == "trmm":
            task = _plan_trmm(call, i, j, task_id, snap)
        else:
            task = _plan_trsm(call, i, j, task_id)
        tasks.append(task)

    if call.kind == "trsm":
        index = {(task.i, task.j): task for task in tasks}
        dependents: dict[int, list[int]] = {task.task_id: [] for task in tasks}
        for task in tasks:
            ks = _trsm_gemm_ks(call, task.i, task.j)
            task.deps_remaining = len(ks)
            for k in ks:
                producer = index[(k, task.j) if call.side == "left"
                                 else (task.i, k)]
                dependents[producer.task_id].append(task.task_id)
        for task in tasks:
            task.dependents = tuple(sorted(dependents[task.task_id]))

    plan = TaskPlan(call, t, tasks, matrices,
                    total_flops=sum(task.flops for task in tasks))
    return plan


def gemm_flop_fraction(plan: TaskPlan) -> float:
    """Share of the plan's flops spent in plain gemm accumulation steps."""
    gemm = 0
    total = 0
    for task in plan.tasks:
        for s in task.steps:
            total += s.flops
            if s.kind == GEMM_UPDATE:
                gemm += s.flops
    return gemm / total if total else 0.0


def apply_step_arrays(step: TaskStep, c2d: np.ndarray, a2d: np.ndarray,
                      b2d: Optional[np.ndarray], call: RoutineCall) -> None:
    """Run one step's kernel over physical-orientation 2-d arrays."""
    kind = step.kind
    if kind == GEMM_UPDATE:
        kernels.gemm_update(c2d, a2d, b2d, step.alpha, step.beta,
                            step.a.transposed, step.b.transposed)
    elif kind == SYRK_UPDATE:
        kernels.syrk_update(c2d, a2d, step.alpha, step.beta, call.uplo,
                            step.a.transposed)
    elif kind == SYR2K_UPDATE:
        kernels.syr2k_update(c2d, a2d, b2d, step.alpha, step.beta, call.uplo,
                             step.a.transposed, step.b.transposed)
    elif kind == TRSM_SOLVE:
        kernels.trsm_solve(c2d, a2d, step.alpha, call.uplo, call.diag,
                           call.side, call.trans_a)
    elif kind == TRMM_DIAG:
        kernels.trmm_diag(c2d, a2d, b2d, step.alpha, step.beta, call.uplo,
                          call.diag, call.side, call.trans_a)
    elif kind == SYMM_DIAG:
        kernels.symm_diag(c2d, a2d, b2d, step.alpha, step.beta, call.uplo,
                          call.side)
    else:
        raise InvalidArgumentError(f"unknown kernel kind {kind!r}")


def execute_task_on_host(task: Task, plan: TaskPlan) -> None:
    """Run a task directly over host storage (no copies, no cache)."""
    t = plan.tile_size
    mats = plan.matrices
    c2d = tile_view(mats[task.out_ref.matrix_id], task.out_ref, t)
    for step in task.steps:
        a2d = tile_view(mats[step.a.matrix_id], step.a, t)
        b2d = None
        if step.b is not None:
            b2d = tile_view(mats[step.b.matrix_id], step.b, t)
        apply_step_arrays(step, c2d, a2d, b2d, plan.call)


def run_plan_on_host(plan: TaskPlan) -> None:
    """Dependency-ordered sequential execution of a whole plan."""
    remaining = {t.task_id: t.deps_remaining for t in plan.tasks}
    ready = [t.task_id for t in plan.tasks if t.deps_remaining == 0]
    by_id = {t.task_id: t for t in plan.tasks}
    done = 0
    while ready:
        tid = ready.pop(0)
        task = by_id[tid]
        execute_task_on_host(task, plan)
        done += 1
        for dep in task.dependents:
            remaining[dep] -= 1
            if remaining[dep] == 0:
                ready.append(dep)
    if done != len(plan.tasks):
        raise InvalidArgumentError("dependency cycle in task plan")
