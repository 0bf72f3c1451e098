"""Cycle-level analytic model of the multi-sub-accelerator template.

Per tile, compute cycles follow one of four kernel-mode mappings and off-chip
traffic follows one of three tiling-mode reuse patterns; compute and transfer
overlap through double buffering (per-tile max), sub-accelerators run a phase
in parallel under a shared bandwidth cap, and phases within a layer run
sequentially on the same hardware.

The closed forms here are vectorized over the tile grid; the event-level walk
in ``oracle`` reproduces them tile by tile and PE step by PE step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .accel import (
    ROWS,
    AccelConfig,
    AccelSpace,
    Assignment,
    Platform,
    TileSizes,
    WorkloadPlan,
    allocate,
    buffer_requirement,
    tile_sizes_for,
    validate,
)
from .errors import SimulationRefusedError
from .workload import (
    PHASE_AGGREGATION,
    PHASE_ATTENTION,
    LayerWorkload,
    MatmulOp,
)


# ---------------------------------------------------------------------------
# single-tile compute cycles (public contract, mirrored by the oracle)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TileNnzStats:
    """Nonzero statistics of one tile of the left operand."""

    dense: bool
    nnz: float = 0.0
    row_nnz: np.ndarray | None = None  # length t_m
    col_nnz: np.ndarray | None = None  # length t_k

    @classmethod
    def for_dense(cls) -> "TileNnzStats":
        return cls(dense=True)


def tile_compute_cycles(kernel_mode: int, tiles: TileSizes,
                        stats: TileNnzStats, pe: int) -> float:
    """Cycles one PE array spends on one (t_m x t_k) @ (t_k x t_n) tile.

    Mode 0 streams balanced rows to output-stationary waves; mode 1 maps rows
    to PEs in lockstep over the worst row; mode 2 expands K-slices as outer
    products; mode 3 keeps output columns stationary and streams every
    nonzero past them.
    """
    t_m, t_k, t_n = tiles.t_m, tiles.t_k, tiles.t_n
    if kernel_mode == 0:
        per_wave = t_k if stats.dense else math.ceil(stats.nnz / t_m)
        return math.ceil(t_m * t_n / pe) * per_wave
    if kernel_mode == 1:
        r_max = t_k if stats.dense else (
            float(stats.row_nnz.max()) if len(stats.row_nnz) else 0.0
        )
        return math.ceil(t_m / pe) * r_max * t_n
    if kernel_mode == 2:
        if stats.dense:
            return t_k * math.ceil(t_m * t_n / pe)
        return float(np.ceil(stats.col_nnz * t_n / pe).sum())
    if kernel_mode == 3:
        nnz = t_m * t_k if stats.dense else stats.nnz
        return math.ceil(t_n / pe) * nnz
    raise ValueError(f"unknown kernel mode {kernel_mode}")


# ---------------------------------------------------------------------------
# per-operand tile statistics over a whole sub-matmul
# ---------------------------------------------------------------------------

def block_sizes(total: int, t: int) -> np.ndarray:
    """Actual sizes of the ceil(total/t) tiles covering ``total``."""
    if total <= 0:
        return np.zeros(0, dtype=np.int64)
    nb = -(-total // t)
    sizes = np.full(nb, t, dtype=np.int64)
    sizes[-1] = total - t * (nb - 1)
    return sizes


class OperandStats:
    """Left-operand statistics for one sub-accelerator's slice of an op.

    Exact per-tile statistics come from the CSR support (entries weighted by
    the sampling keep probability, self loops at weight one); without a CSR
    the per-row profile is spread uniformly across columns.
    """

    def __init__(self, op: MatmulOp, rows: tuple[int, int] | None = None):
        self.dense = not op.left_sparse
        self.k = op.k
        r0, r1 = rows if rows is not None else (0, op.m)
        self.m = r1 - r0
        if self.dense:
            self.row_nnz = None
            self.entries = None
            return
        self.row_nnz = op.row_nnz[r0:r1]
        self.entries = None
        if op.csr is not None:
            lo, hi = op.csr.row_ptr[r0], op.csr.row_ptr[r1]
            local_rows = (np.repeat(np.arange(r0, r1),
                                    np.diff(op.csr.row_ptr[r0:r1 + 1])))
            cols = op.csr.col_idx[lo:hi]
            w = np.where(cols == local_rows, 1.0, float(op.sample_rate))
            self.entries = (local_rows - r0, cols, w)

    @property
    def total_nnz(self) -> float:
        if self.dense:
            return float(self.m) * self.k
        return float(self.row_nnz.sum())

    @property
    def max_row_nnz(self) -> float | None:
        if self.dense:
            return None
        return float(self.row_nnz.max()) if len(self.row_nnz) else 0.0

    def max_tile_nnz(self, t_m: int, t_k: int) -> float | None:
        """Conservative cap on nonzeros in any single tile."""
        if self.dense:
            return None
        return min(t_m * (self.max_row_nnz or 0.0), float(t_m) * t_k)

    def _grid(self, tiles: TileSizes):
        m_sizes = block_sizes(self.m, tiles.t_m).astype(np.float64)
        k_sizes = block_sizes(self.k, tiles.t_k).astype(np.float64)
        return m_sizes, k_sizes


def _sparse_matrices(stats: OperandStats, tiles: TileSizes):
    """V (tile nnz), plus lazy providers for mode-specific statistics."""
    m_sizes, k_sizes = stats._grid(tiles)
    rb_n, kb_n = len(m_sizes), len(k_sizes)
    if stats.entries is not None:
        rows, cols, w = stats.entries
        rb = rows // tiles.t_m
        kb = cols // tiles.t_k
        v = np.bincount(rb * kb_n + kb, weights=w,
                        minlength=rb_n * kb_n).reshape(rb_n, kb_n)
    else:
        blocksum = np.add.reduceat(stats.row_nnz,
                                   np.arange(0, stats.m, tiles.t_m))
        v = np.outer(blocksum, k_sizes) / stats.k
    return m_sizes, k_sizes, v


def _sparse_rmax(stats: OperandStats, tiles: TileSizes,
                 m_sizes: np.ndarray, k_sizes: np.ndarray) -> np.ndarray:
    rb_n, kb_n = len(m_sizes), len(k_sizes)
    if stats.entries is not None:
        rows, cols, w = stats.entries
        kb = cols // tiles.t_k
        per_row = np.bincount(rows * kb_n + kb, weights=w,
                              minlength=stats.m * kb_n).reshape(stats.m, kb_n)
        pad = rb_n * tiles.t_m - stats.m
        if pad:
            per_row = np.vstack([per_row, np.zeros((pad, kb_n))])
        return per_row.reshape(rb_n, tiles.t_m, kb_n).max(axis=1)
    blockmax = np.maximum.reduceat(stats.row_nnz,
                                   np.arange(0, stats.m, tiles.t_m))
    return np.outer(blockmax, k_sizes) / stats.k


def _sparse_mode2(stats: OperandStats, tiles: TileSizes, n_b: float, pe: int,
                  m_sizes: np.ndarray, k_sizes: np.ndarray) -> np.ndarray:
    """(RB, KB) matrix of sum_k ceil(c_k * n_b / pe) per tile."""
    rb_n, kb_n = len(m_sizes), len(k_sizes)
    if stats.entries is not None:
        rows, cols, w = stats.entries
        rb = rows // tiles.t_m
        per_col = np.bincount(cols * rb_n + rb, weights=w,
                              minlength=stats.k * rb_n).reshape(stats.k, rb_n)
        x = np.ceil(per_col * n_b / pe)
        # when a column holds no nonzeros its K-slice is skipped entirely
        x[per_col == 0.0] = 0.0
        kb_starts = np.arange(0, stats.k, tiles.t_k)
        return np.add.reduceat(x, kb_starts, axis=0).T
    blocksum = np.add.reduceat(stats.row_nnz,
                               np.arange(0, stats.m, tiles.t_m))
    c = blocksum / stats.k  # expected per-column nnz within the row block
    per_col = np.ceil(np.outer(c, np.full(kb_n, 1.0)) * n_b / pe)
    per_col[np.outer(c, np.ones(kb_n)) == 0.0] = 0.0
    return per_col * k_sizes[None, :]


def op_cycle_groups(stats: OperandStats, mode: int, tiles: TileSizes,
                    n_total: int, pe: int):
    """Per-tile compute cycles grouped by distinct output-tile widths.

    Returns [(count, matrix)] where ``matrix`` is (RB, KB) cycles for one tile
    and ``count`` is how many output-column blocks share that width.
    """
    m_sizes, k_sizes = stats._grid(tiles)
    n_sizes = block_sizes(n_total, tiles.t_n)
    widths, counts = np.unique(n_sizes, return_counts=True)
    groups = []
    if stats.dense:
        for n_b, cnt in zip(widths.astype(float), counts):
            if mode == 0:
                mat = (np.ceil(m_sizes * n_b / pe)[:, None]
                       * k_sizes[None, :])
            elif mode == 1:
                mat = (np.ceil(m_sizes / pe)[:, None] * k_sizes[None, :] * n_b)
            elif mode == 2:
                mat = k_sizes[None, :] * np.ceil(m_sizes * n_b / pe)[:, None]
            elif mode == 3:
                mat = (math.ceil(n_b / pe)
                       * np.outer(m_sizes, k_sizes))
            else:
                raise ValueError(f"unknown kernel mode {mode}")
            groups.append((int(cnt), mat))
        return groups

    m_sizes, k_sizes, v = _sparse_matrices(stats, tiles)
    if mode == 1:
        rmax = _sparse_rmax(stats, tiles, m_sizes, k_sizes)
    for n_b, cnt in zip(widths.astype(float), counts):
        if mode == 0:
            per_wave = np.ceil(v / m_sizes[:, None])
            mat = np.ceil(m_sizes * n_b / pe)[:, None] * per_wave
        elif mode == 1:
            mat = np.ceil(m_sizes / pe)[:, None] * rmax * n_b
        elif mode == 2:
            mat = _sparse_mode2(stats, tiles, n_b, pe, m_sizes, k_sizes)
        elif mode == 3:
            mat = math.ceil(n_b / pe) * v
        else:
            raise ValueError(f"unknown kernel mode {mode}")
        groups.append((int(cnt), mat))
    return groups


# ---------------------------------------------------------------------------
# off-chip traffic
# ---------------------------------------------------------------------------

TRAFFIC_CLASSES = ("feature", "index", "weight", "output")


def reload_factors(tiling_mode: int, dims: tuple[int, int, int],
                   tiles: TileSizes) -> dict[str, float]:
    """Reload multipliers per operand class for one tiling (reuse) mode."""
    m, k, n = dims
    k_trips = -(-k // tiles.t_k)
    n_trips = -(-n // tiles.t_n)
    m_trips = -(-m // tiles.t_m)
    if tiling_mode == 0:    # weight stays resident
        return {"feature": n_trips, "weight": 1.0,
                "output": 2.0 * k_trips - 1.0}
    if tiling_mode == 1:    # feature stays resident
        return {"feature": 1.0, "weight": m_trips,
                "output": 2.0 * k_trips - 1.0}
    if tiling_mode == 2:    # output stays resident until complete
        return {"feature": n_trips, "weight": m_trips, "output": 1.0}
    raise ValueError(f"unknown tiling mode {tiling_mode}")


def tile_offchip_traffic(tiling_mode: int, dims: tuple[int, int, int],
                         tiles: TileSizes, platform: Platform,
                         left_sparse: bool = False,
                         nnz: float = 0.0) -> dict[str, float]:
    """Off-chip bytes per operand class for one sub-matmul under one tiling.

    Base volumes are one full pass over each operand; the reload factors
    account for re-fetches across tile trips, with partial-sum outputs read
    back and rewritten (2c-1 trips for c K-tiles).
    """
    m, k, n = dims
    v = platform.value_bytes
    factors = reload_factors(tiling_mode, dims, tiles)
    if left_sparse:
        feature = nnz * v
        index = nnz * 2 * platform.index_bytes
    else:
        feature = float(m) * k * v
        index = 0.0
    return {
        "feature": feature * factors["feature"],
        "index": index * factors["feature"],
        "weight": float(k) * n * v * factors["weight"],
        "output": float(m) * n * v * factors["output"],
    }


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class PhaseRecord:
    layer: int
    phase: str
    op_index: int
    cycles: int
    compute_cycles: float
    memory_cycles: float
    edge_cycles: int
    traffic: dict

    def to_json_dict(self) -> dict:
        return {
            "layer": self.layer, "phase": self.phase,
            "op_index": self.op_index, "cycles": self.cycles,
            "compute_cycles": self.compute_cycles,
            "memory_cycles": self.memory_cycles,
            "edge_cycles": self.edge_cycles,
            "traffic": dict(self.traffic),
        }


@dataclass
class SimReport:
    total_cycles: int
    latency_seconds: float
    phases: list
    traffic_bytes: dict
    offchip_bytes_total: float
    average_bandwidth_bytes_per_sec: float
    peak_buffer_bytes: list
    pe_utilization: float
    useful_macs: float

    def to_json_dict(self) -> dict:
        return {
            "total_cycles": self.total_cycles,
            "latency_seconds": self.latency_seconds,
            "phases": [p.to_json_dict() for p in self.phases],
            "traffic_bytes": dict(self.traffic_bytes),
            "offchip_bytes_total": self.offchip_bytes_total,
            "average_bandwidth_bytes_per_sec":
                self.average_bandwidth_bytes_per_sec,
            "peak_buffer_bytes": list(self.peak_buffer_bytes),
            "pe_utilization": self.pe_utilization,
            "useful_macs": self.useful_macs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# the simulator proper
# ---------------------------------------------------------------------------

def _assignment_dims(op: MatmulOp, scheme: str,
                     a: Assignment) -> tuple[int, int, int]:
    if scheme == ROWS:
        return (a.size, op.k, op.n)
    return (op.m, op.k, a.size)


def _op_macs(op: MatmulOp, scheme: str, a: Assignment) -> float:
    if scheme == ROWS:
        if op.left_sparse:
            return a.nnz * op.n
        return float(a.size) * op.k * op.n
    if op.left_sparse:
        return float(op.row_nnz.sum()) * a.size
    return float(op.m) * op.k * a.size


@dataclass
class _OpCost:
    """One op's per-sub-accelerator latency/traffic before phase assembly."""

    op: MatmulOp
    scheme: str
    plan: WorkloadPlan
    tiles: list
    compute: list          # pure compute cycles per sub-acc
    tile_groups: list      # cycle groups per sub-acc (for overlap sums)
    n_tiles: list
    traffic: list          # per-class dict per sub-acc
    buffers: list


def _cost_op(op: MatmulOp, config: AccelConfig, platform: Platform,
             space: AccelSpace) -> _OpCost:
    plan = allocate(op, config, platform)
    scheme = plan.scheme
    tiles_out, compute, groups_out, n_tiles, traffic, buffers = \
        [], [], [], [], [], []
    for i, (sub, a) in enumerate(zip(config.sub_accs, plan.assignments)):
        if a.empty:
            tiles_out.append(None)
            compute.append(0.0)
            groups_out.append([])
            n_tiles.append(0)
            traffic.append({c: 0.0 for c in TRAFFIC_CLASSES})
            buffers.append(0.0)
            continue
        dims = _assignment_dims(op, scheme, a)
        rows = (a.start, a.stop) if scheme == ROWS else None
        stats = OperandStats(op, rows=rows)
        tiles = tile_sizes_for(
            sub.tile_size_index, dims, platform, space,
            kernel_mode=sub.kernel_mode, tiling_mode=sub.tiling_mode,
            max_row_nnz=stats.max_row_nnz,
        )
        groups = op_cycle_groups(stats, sub.kernel_mode, tiles, dims[2],
                                 sub.pe_count)
        comp = float(sum(cnt * mat.sum() for cnt, mat in groups))
        nt = sum(cnt * mat.size for cnt, mat in groups)
        tr = tile_offchip_traffic(
            sub.tiling_mode, dims, tiles, platform,
            left_sparse=op.left_sparse, nnz=stats.total_nnz,
        )
        buf = buffer_requirement(sub.kernel_mode, sub.tiling_mode, tiles,
                                 platform,
                                 stats.max_tile_nnz(tiles.t_m, tiles.t_k))
        tiles_out.append(tiles)
        compute.append(comp)
        groups_out.append(groups)
        n_tiles.append(nt)
        traffic.append(tr)
        buffers.append(buf)
    return _OpCost(op=op, scheme=scheme, plan=plan, tiles=tiles_out,
                   compute=compute, tile_groups=groups_out, n_tiles=n_tiles,
                   traffic=traffic, buffers=buffers)


def _apply_wbuf_sharing(cost: _OpCost, config: AccelConfig) -> None:
    """Replicated weights are fetched once through the shared buffers."""
    if not (config.wbuf_sharing and cost.plan.weights_replicated):
        return
    weights = [t["weight"] for t in cost.traffic]
    shared = max(weights) if weights else 0.0
    first = True
    for t in cost.traffic:
        t["weight"] = shared if first else 0.0
        first = False


def _zero_class(cost: _OpCost, cls: str) -> None:
    for t in cost.traffic:
        t[cls] = 0.0


def _overlap_latency(cost: _OpCost, platform: Platform) -> list[float]:
    """Per sub-accelerator: sum over tiles of max(compute, transfer share)."""
    bpc = platform.bytes_per_cycle
    out = []
    for groups, nt, tr in zip(cost.tile_groups, cost.n_tiles, cost.traffic):
        if nt == 0:
            out.append(0.0)
            continue
        tau = sum(tr.values()) / nt / bpc
        total = 0.0
        for cnt, mat in groups:
            total += cnt * float(np.maximum(mat, tau).sum())
        out.append(total)
    return out


def simulate(workloads: list[LayerWorkload], config: AccelConfig,
             platform: Platform, space: AccelSpace | None = None,
             check: bool = True) -> SimReport:
    """End-to-end latency, traffic, and buffer report for a workload list.

    Phases run sequentially; sub-accelerators run one phase in parallel with
    a barrier, each overlapping compute with its tile transfers, under a
    shared aggregate bandwidth cap. Raises SimulationRefusedError when the
    configuration fails validation.
    """
    space = space or AccelSpace(platform=platform)
    if check:
        violations = validate(config, platform, workloads, space=space)
        if violations:
            raise SimulationRefusedError(violations)

    pe_total = int(config.pe_counts().sum())
    bpc = platform.bytes_per_cycle
    repurpose = config.buffer_repurposing

    # cost every op first so inter-phase reuse can zero linked traffic
    costs: list[list[_OpCost]] = []
    for lw in workloads:
        layer_costs = [_cost_op(op, config, platform, space) for op in lw.ops]
        costs.append(layer_costs)

    for layer_costs in costs:
        for cost in layer_costs:
            _apply_wbuf_sharing(cost, config)

    if repurpose:
        _apply_buffer_repurposing(costs, platform)

    phases: list[PhaseRecord] = []
    total_cycles = 0
    class_totals = {c: 0.0 for c in TRAFFIC_CLASSES}
    peak_buffer = [0.0] * config.num_subaccs
    useful = 0.0

    for lw, layer_costs in zip(workloads, costs):
        for oi, cost in enumerate(layer_costs):
            op = cost.op
            sub_lat = _overlap_latency(cost, platform)
            active = [lat + platform.startup_cycles
                      for lat, nt in zip(sub_lat, cost.n_tiles) if nt > 0]
            compute_side = max(active) if active else 0.0
            op_traffic = {
                c: sum(t[c] for t in cost.traffic) for c in TRAFFIC_CLASSES
            }
            phase_traffic = sum(op_traffic.values())
            memory_side = phase_traffic / bpc
            edge_cycles = (math.ceil(op.edge_op_count / pe_total)
                           if op.edge_op_count else 0)
            cycles = int(math.ceil(max(compute_side, memory_side))) + edge_cycles
            total_cycles += cycles
            for c in TRAFFIC_CLASSES:
                class_totals[c] += op_traffic[c]
            for i, b in enumerate(cost.buffers):
                peak_buffer[i] = max(peak_buffer[i], b)
            useful += sum(
                _op_macs(op, cost.scheme, a) for a in cost.plan.assignments
                if not a.empty
            )
            phases.append(PhaseRecord(
                layer=lw.layer, phase=op.phase, op_index=oi, cycles=cycles,
                compute_cycles=compute_side, memory_cycles=memory_side,
                edge_cycles=edge_cycles, traffic=op_traffic,
            ))

    latency = total_cycles / platform.clock_hz
    offchip_total = sum(class_totals.values())
    avg_bw = offchip_total / latency if latency > 0 else 0.0
    util = (useful / (pe_total * total_cycles)
            if total_cycles > 0 and pe_total > 0 else 0.0)
    return SimReport(
        total_cycles=total_cycles,
        latency_seconds=latency,
        phases=phases,
        traffic_bytes=class_totals,
        offchip_bytes_total=offchip_total,
        average_bandwidth_bytes_per_sec=avg_bw,
        peak_buffer_bytes=peak_buffer,
        pe_utilization=util,
        useful_macs=useful,
    )


def _apply_buffer_repurposing(costs: list[list], platform: Platform) -> None:
    """Zero traffic for inter-phase intermediates that fit on chip.

    Within a layer: the aggregation output feeds the GIN/combination chain
    through their left ("feature") operands. Across phases and layers, the
    producing op's output write and every consumer's read of that tensor are
    dropped when the dense intermediate fits the combined buffer budget. The
    dataset inputs (layer-0 features, adjacency values/indices), the weights,
    and the final prediction output always pay off-chip traffic.
    """
    budget = platform.onchip_buffer_bytes
    v = platform.value_bytes

    def fits(rows: int, cols: int) -> bool:
        return rows * cols * v <= budget

    for li, layer_costs in enumerate(costs):
        # consumers of the layer input (previous layer's output)
        if li > 0:
            prev_out = costs[li - 1][-1].op
            if fits(prev_out.m, prev_out.n):
                _zero_class(costs[li - 1][-1], "output")
                for cost in layer_costs:
                    if cost.op.phase == PHASE_ATTENTION:
                        _zero_class(cost, "feature")
                    elif cost.op.phase == PHASE_AGGREGATION:
                        _zero_class(cost, "weight")
                    else:
                        break
        # within the layer: chain from aggregation onward
        for a, b in zip(layer_costs, layer_costs[1:]):
            if a.op.phase == PHASE_ATTENTION:
                continue  # its output feeds the edge units, handled below
            if fits(a.op.m, a.op.n):
                _zero_class(a, "output")
                _zero_class(b, "feature")
        # the attention prepass output feeds the on-chip edge units; residence
        # removes its write-out
        for cost in layer_costs:
            if cost.op.phase == PHASE_ATTENTION and fits(cost.op.m, cost.op.n):
                _zero_class(cost, "output")
