"""Event-level verification oracle for the analytic compute-cycle model.

Walks every tile and every PE assignment step by step, counting cycles one at
a time per the kernel-mode machine semantics. Deliberately loop-heavy and
capped to small dimensions; used only by tests and never by the search.
"""

from __future__ import annotations

import numpy as np

from .accel import ROWS, AccelConfig, AccelSpace, Platform, allocate, tile_sizes_for
from .errors import OracleCapError
from .simulator import OperandStats, _assignment_dims
from .workload import MatmulOp

ORACLE_DIM_CAP = 64


def oracle_tile_cycles(kernel_mode: int, t_m: int, t_k: int, t_n: int,
                       pe: int, tile_entries: np.ndarray | None = None) -> int:
    """Walk one tile; ``tile_entries`` is a dense 0/1 occupancy map of the
    left-operand tile (None means dense)."""
    if max(t_m, t_k, t_n) > ORACLE_DIM_CAP:
        raise OracleCapError(f"tile dims ({t_m},{t_k},{t_n}) exceed the cap")
    dense = tile_entries is None
    if dense:
        row_counts = [t_k] * t_m
        col_counts = [t_m] * t_k
        nnz = t_m * t_k
    else:
        row_counts = [int(tile_entries[r].sum()) for r in range(t_m)]
        col_counts = [int(tile_entries[:, c].sum()) for c in range(t_k)]
        nnz = int(tile_entries.sum())

    cycles = 0
    if kernel_mode == 0:
        # output-stationary waves of pe outputs; balanced row streaming pads
        # every wave to the mean row occupancy, rounded up
        per_wave = t_k if dense else -(-nnz // t_m)
        outputs = t_m * t_n
        done = 0
        while done < outputs:
            done += min(pe, outputs - done)
            for _ in range(per_wave):
                cycles += 1
    elif kernel_mode == 1:
        # one row per PE, lockstep over the worst row of the whole tile
        r_max = max(row_counts) if row_counts else 0
        row = 0
        while row < t_m:
            row += min(pe, t_m - row)
            for _ in range(r_max):
                for _ in range(t_n):
                    cycles += 1
    elif kernel_mode == 2:
        # outer products per K slice, pe MACs per cycle
        for k in range(t_k):
            remaining = col_counts[k] * t_n
            while remaining > 0:
                remaining -= min(pe, remaining)
                cycles += 1
    elif kernel_mode == 3:
        # weight-stationary column groups; every nonzero streams past each
        col = 0
        while col < t_n:
            col += min(pe, t_n - col)
            for _ in range(nnz):
                cycles += 1
    else:
        raise ValueError(f"unknown kernel mode {kernel_mode}")
    return cycles


def _dense_tile_map(op: MatmulOp, r0: int, r1: int, k0: int, k1: int):
    """0/1 occupancy of the left operand block [r0:r1) x [k0:k1)."""
    if not op.left_sparse:
        return None
    if op.csr is None:
        raise OracleCapError("oracle needs the exact sparse matrix")
    tile = np.zeros((r1 - r0, k1 - k0), dtype=np.int64)
    for r in range(r0, r1):
        lo, hi = op.csr.row_ptr[r], op.csr.row_ptr[r + 1]
        for c in op.csr.col_idx[lo:hi]:
            if k0 <= c < k1:
                tile[r - r0, c - k0] = 1
    return tile


def oracle_simulate(op: MatmulOp, config: AccelConfig, platform: Platform,
                    space: AccelSpace | None = None) -> int:
    """Compute-cycle walk of one op across sub-accelerators (max, barrier).

    Matches the analytic per-phase compute side with startup and bandwidth
    terms excluded; refuses dimensions above the oracle cap and sampled
    (fractional) sparse operands.
    """
    if max(op.m, op.k, op.n) > ORACLE_DIM_CAP:
        raise OracleCapError(f"op dims ({op.m},{op.k},{op.n}) exceed the cap")
    if op.left_sparse and op.sample_rate < 1.0:
        raise OracleCapError("oracle walks exact patterns only (rate < 1)")
    space = space or AccelSpace(platform=platform)
    plan = allocate(op, config, platform)
    worst = 0
    for sub, a in zip(config.sub_accs, plan.assignments):
        if a.empty:
            continue
        dims = _assignment_dims(op, plan.scheme, a)
        if plan.scheme == ROWS:
            row_off = a.start
            stats = OperandStats(op, rows=(a.start, a.stop))
        else:
            row_off = 0
            stats = OperandStats(op)
        tiles = tile_sizes_for(
            sub.tile_size_index, dims, platform, space,
            kernel_mode=sub.kernel_mode, tiling_mode=sub.tiling_mode,
            max_row_nnz=stats.max_row_nnz,
        )
        cycles = 0
        m, k, n = dims
        for rb0 in range(0, m, tiles.t_m):
            rb1 = min(rb0 + tiles.t_m, m)
            for kb0 in range(0, k, tiles.t_k):
                kb1 = min(kb0 + tiles.t_k, k)
                tile_map = _dense_tile_map(op, row_off + rb0, row_off + rb1,
                                           kb0, kb1)
                for nb0 in range(0, n, tiles.t_n):
                    nb1 = min(nb0 + tiles.t_n, n)
                    cycles += oracle_tile_cycles(
                        sub.kernel_mode, rb1 - rb0, kb1 - kb0, nb1 - nb0,
                        sub.pe_count, tile_map,
                    )
        worst = max(worst, cycles)
    return worst
