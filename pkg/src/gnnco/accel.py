"""Searchable accelerator configurations, platform budgets, workload allocation.

A configuration is a pair of global buffer flags plus one (tiling mode,
kernel mode, tile size index, PE count) tuple per sub-accelerator. When
either buffer flag is set, tiling and kernel modes must be uniform across
sub-accelerators.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InfeasibleTileError
from .workload import (
    PHASE_AGGREGATION,
    PHASE_ATTENTION,
    PHASE_COMBINATION,
    PHASE_GIN,
    MatmulOp,
)

TILING_MODES = (0, 1, 2)   # 0: weight reuse, 1: feature reuse, 2: output reuse
KERNEL_MODES = (0, 1, 2, 3)  # inner-product, row-wise, outer-product, column-wise

ROWS = "rows"
COLS = "cols"

DEFAULT_ALLOCATION = {
    PHASE_ATTENTION: ROWS,
    PHASE_AGGREGATION: ROWS,
    PHASE_GIN: ROWS,
    PHASE_COMBINATION: COLS,
}


@dataclass(frozen=True)
class Platform:
    """Fixed platform budgets (defaults follow the reference FPGA setup)."""

    total_pes: int = 4096
    clock_hz: float = 330e6
    offchip_bytes_per_sec: float = 460e9
    onchip_buffer_bytes: int = 42 * 2**20
    value_bytes: int = 2
    index_bytes: int = 4  # per COO coordinate
    num_subaccs: int = 5
    startup_cycles: int = 1000

    def __post_init__(self):
        if self.num_subaccs < 1:
            raise ValueError("num_subaccs must be >= 1")
        for name in ("total_pes", "clock_hz", "offchip_bytes_per_sec",
                     "onchip_buffer_bytes", "value_bytes", "index_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def bytes_per_cycle(self) -> float:
        return self.offchip_bytes_per_sec / self.clock_hz

    @property
    def buffer_share(self) -> float:
        return self.onchip_buffer_bytes / self.num_subaccs

    def to_json_dict(self) -> dict:
        return {
            "total_pes": self.total_pes, "clock_hz": self.clock_hz,
            "offchip_bytes_per_sec": self.offchip_bytes_per_sec,
            "onchip_buffer_bytes": self.onchip_buffer_bytes,
            "value_bytes": self.value_bytes, "index_bytes": self.index_bytes,
            "num_subaccs": self.num_subaccs,
            "startup_cycles": self.startup_cycles,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Platform":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class SubAccConfig:
    tiling_mode: int
    kernel_mode: int
    tile_size_index: int
    pe_count: int


@dataclass(frozen=True)
class AccelConfig:
    buffer_repurposing: bool
    wbuf_sharing: bool
    sub_accs: tuple  # tuple[SubAccConfig, ...]
    allocation_scheme: tuple = tuple(sorted(DEFAULT_ALLOCATION.items()))

    @property
    def num_subaccs(self) -> int:
        return len(self.sub_accs)

    def scheme_for(self, phase: str) -> str:
        return dict(self.allocation_scheme).get(phase, ROWS)

    def pe_counts(self) -> np.ndarray:
        return np.asarray([s.pe_count for s in self.sub_accs], dtype=np.int64)

    def requires_uniform_modes(self) -> bool:
        return self.buffer_repurposing or self.wbuf_sharing

    def to_json_dict(self) -> dict:
        return {
            "buffer_repurposing": self.buffer_repurposing,
            "wbuf_sharing": self.wbuf_sharing,
            "allocation_scheme": dict(self.allocation_scheme),
            "sub_accelerators": [
                {"tiling_mode": s.tiling_mode, "kernel_mode": s.kernel_mode,
                 "tile_size_index": s.tile_size_index, "pe_count": s.pe_count}
                for s in self.sub_accs
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AccelConfig":
        subs = tuple(
            SubAccConfig(
                tiling_mode=int(s["tiling_mode"]),
                kernel_mode=int(s["kernel_mode"]),
                tile_size_index=int(s["tile_size_index"]),
                pe_count=int(s["pe_count"]),
            )
            for s in d["sub_accelerators"]
        )
        scheme = d.get("allocation_scheme", DEFAULT_ALLOCATION)
        return cls(
            buffer_repurposing=bool(d["buffer_repurposing"]),
            wbuf_sharing=bool(d["wbuf_sharing"]),
            sub_accs=subs,
            allocation_scheme=tuple(sorted(scheme.items())),
        )


@dataclass(frozen=True)
class TileSizes:
    t_m: int
    t_k: int
    t_n: int

    def __post_init__(self):
        if min(self.t_m, self.t_k, self.t_n) <= 0:
            raise ValueError("tile dims must be positive")


@dataclass(frozen=True)
class Assignment:
    """One sub-accelerator's contiguous slice of an op (rows or columns)."""

    start: int
    stop: int
    nnz: float  # assigned left-operand nonzeros (rows scheme)

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def empty(self) -> bool:
        return self.stop <= self.start


@dataclass(frozen=True)
class WorkloadPlan:
    scheme: str
    assignments: tuple  # tuple[Assignment, ...] aligned with sub_accs
    weights_replicated: bool


@dataclass(frozen=True)
class AccelSpace:
    """The searchable configuration space for one platform."""

    platform: Platform = Platform()
    n_tile_options: int = 10
    mutate_pe_split: bool = False  # opt-in: PE split joins the searched attrs

    def equal_pe_split(self) -> tuple:
        base = self.platform.total_pes // self.platform.num_subaccs
        rem = self.platform.total_pes - base * self.platform.num_subaccs
        return tuple(base + (1 if i < rem else 0)
                     for i in range(self.platform.num_subaccs))


def random_config(space: AccelSpace, rng: np.random.Generator) -> AccelConfig:
    """Uniform draw per searchable field; uniform tiling/kernel modes are
    enforced when a global buffer flag comes up set."""
    p = space.platform
    repurpose = bool(rng.integers(2))
    share = bool(rng.integers(2))
    pes = space.equal_pe_split()
    if repurpose or share:
        tm = int(rng.integers(len(TILING_MODES)))
        km = int(rng.integers(len(KERNEL_MODES)))
        subs = tuple(
            SubAccConfig(tm, km, int(rng.integers(space.n_tile_options)), pes[i])
            for i in range(p.num_subaccs)
        )
    else:
        subs = tuple(
            SubAccConfig(
                int(rng.integers(len(TILING_MODES))),
                int(rng.integers(len(KERNEL_MODES))),
                int(rng.integers(space.n_tile_options)),
                pes[i],
            )
            for i in range(p.num_subaccs)
        )
    return AccelConfig(buffer_repurposing=repurpose, wbuf_sharing=share,
                       sub_accs=subs)


def enforce_uniform_modes(config: AccelConfig) -> AccelConfig:
    """Copy sub-accelerator 0's modes everywhere if a buffer flag demands it."""
    if not config.requires_uniform_modes() or config.num_subaccs == 0:
        return config
    tm = config.sub_accs[0].tiling_mode
    km = config.sub_accs[0].kernel_mode
    subs = tuple(replace(s, tiling_mode=tm, kernel_mode=km)
                 for s in config.sub_accs)
    return replace(config, sub_accs=subs)


# ---------------------------------------------------------------------------
# tile size ladder
# ---------------------------------------------------------------------------

def tile_ladder(n_options: int, low: int = 10, high: int = 100) -> list[int]:
    """Geometric ladder of ``n_options`` sizes from ~10 to ~100, rounded and
    non-decreasing."""
    if n_options < 1:
        raise ValueError("need at least one tile option")
    if n_options == 1:
        return [low]
    vals = []
    for i in range(n_options):
        v = int(round(low * (high / low) ** (i / (n_options - 1))))
        vals.append(max(v, vals[-1] if vals else 1))
    return vals


def buffer_requirement(kernel_mode: int, tiling_mode: int, tiles: TileSizes,
                       platform: Platform,
                       max_tile_nnz: float | None = None) -> float:
    """Bytes of on-chip buffer one sub-accelerator needs for these tiles.

    Inputs are double buffered; the output tile is resident once; the
    outer-product mode additionally banks a full output-tile accumulator.
    Sparse left tiles store values plus two COO coordinates per nonzero.
    """
    v = platform.value_bytes
    if max_tile_nnz is None:
        left = tiles.t_m * tiles.t_k * v
    else:
        left = max_tile_nnz * (v + 2 * platform.index_bytes)
    right = tiles.t_k * tiles.t_n * v
    out = tiles.t_m * tiles.t_n * v
    total = 2.0 * (left + right) + out
    if kernel_mode == 2:
        total += tiles.t_m * tiles.t_n * v
    return total


def tile_sizes_for(index: int, dims: tuple[int, int, int], platform: Platform,
                   space: AccelSpace, kernel_mode: int = 0,
                   tiling_mode: int = 0,
                   max_row_nnz: float | None = None) -> TileSizes:
    """Resolve a tile size index to a concrete clamped (t_M, t_K, t_N) triple.

    Rungs that overflow the per-sub-accelerator buffer share are filtered
    out; the largest feasible rung at or below ``index`` is used. Raises
    InfeasibleTileError when not even the smallest rung fits.
    """
    if not 0 <= index < space.n_tile_options:
        raise ValueError(f"tile index {index} outside [0, {space.n_tile_options})")
    m, k, n = dims
    ladder = tile_ladder(space.n_tile_options)
    share = platform.buffer_share
    for i in range(index, -1, -1):
        t = ladder[i]
        tiles = TileSizes(t_m=min(t, m), t_k=min(t, k), t_n=min(t, n))
        cap = None
        if max_row_nnz is not None:
            cap = min(tiles.t_m * max_row_nnz, tiles.t_m * tiles.t_k)
        if buffer_requirement(kernel_mode, tiling_mode, tiles, platform,
                              cap) <= share:
            return tiles
    raise InfeasibleTileError(
        f"no tile size fits the {share:.0f}-byte buffer share for dims {dims}"
    )


# ---------------------------------------------------------------------------
# validation and allocation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.message}"


def validate(config: AccelConfig, platform: Platform,
             workloads=None, space: AccelSpace | None = None) -> list[Violation]:
    """Budget and constraint check; an empty list means the config is usable."""
    out: list[Violation] = []
    if config.num_subaccs != platform.num_subaccs:
        out.append(Violation(
            "subacc-count",
            f"config has {config.num_subaccs} sub-accelerators, platform "
            f"expects {platform.num_subaccs}",
        ))
    total_pe = int(config.pe_counts().sum())
    if total_pe > platform.total_pes:
        out.append(Violation(
            "pe-budget", f"PE total {total_pe} exceeds {platform.total_pes}"
        ))
    if any(s.pe_count < 1 for s in config.sub_accs):
        out.append(Violation("pe-budget", "every sub-accelerator needs >= 1 PE"))
    if config.requires_uniform_modes():
        modes = {(s.tiling_mode, s.kernel_mode) for s in config.sub_accs}
        if len(modes) > 1:
            out.append(Violation(
                "mode-uniformity",
                "buffer flags require identical tiling/kernel modes on all "
                "sub-accelerators",
            ))
    for s in config.sub_accs:
        if s.tiling_mode not in TILING_MODES or s.kernel_mode not in KERNEL_MODES:
            out.append(Violation("mode-range", f"unknown mode in {s}"))
    if workloads is not None:
        space = space or AccelSpace(platform=platform)
        ops = [op for lw in workloads for op in lw.ops]
        for i, s in enumerate(config.sub_accs):
            for op in ops:
                max_row = None
                if op.left_sparse:
                    max_row = float(op.row_nnz.max()) if len(op.row_nnz) else 0.0
                try:
                    tile_sizes_for(
                        s.tile_size_index, (op.m, op.k, op.n), platform, space,
                        kernel_mode=s.kernel_mode, tiling_mode=s.tiling_mode,
                        max_row_nnz=max_row,
                    )
                except InfeasibleTileError as exc:
                    out.append(Violation(
                        "buffer", f"sub-accelerator {i}: {exc}"
                    ))
                    break
    return out


def allocate(op: MatmulOp, config: AccelConfig,
             platform: Platform) -> WorkloadPlan:
    """Partition an op across sub-accelerators proportionally to PE counts.

    Rows scheme: contiguous row ranges whose nonzero prefix sums sit as close
    as possible to the PE-proportional targets. Cols scheme: contiguous column
    ranges sized by largest-remainder rounding of exact proportional shares.
    """
    scheme = config.scheme_for(op.phase)
    pes = config.pe_counts().astype(np.float64)
    pe_total = pes.sum()
    s_count = len(pes)
    if scheme == COLS:
        quotas = op.n * pes / pe_total
        base = np.floor(quotas).astype(np.int64)
        rem = op.n - int(base.sum())
        frac = quotas - base
        order = np.argsort(-frac, kind="stable")
        counts = base.copy()
        counts[order[:rem]] += 1
        stops = np.cumsum(counts)
        starts = np.concatenate([[0], stops[:-1]])
        per_row = (op.row_nnz if op.left_sparse
                   else np.full(op.m, float(op.k)))
        total_nnz = float(per_row.sum())
        assigns = tuple(
            Assignment(int(a), int(b), total_nnz if b > a else 0.0)
            for a, b in zip(starts, stops)
        )
        return WorkloadPlan(scheme=COLS, assignments=assigns,
                            weights_replicated=False)

    # rows scheme
    per_row = op.row_nnz if op.left_sparse else np.full(op.m, float(op.k))
    cum = np.concatenate([[0.0], np.cumsum(per_row)])
    total = cum[-1]
    targets = np.cumsum(pes / pe_total) * total
    cuts = [0]
    for b in range(s_count - 1):
        lo = cuts[-1]
        t = targets[b]
        c = int(np.searchsorted(cum, t))  # first index with cum[c] >= t
        candidates = [x for x in (c - 1, c) if lo <= x <= op.m]
        if candidates:
            best = min(candidates, key=lambda x: (abs(cum[x] - t), x))
        else:
            best = lo if c <= lo else op.m
        cuts.append(best)
    cuts.append(op.m)
    assigns = tuple(
        Assignment(cuts[i], cuts[i + 1], float(cum[cuts[i + 1]] - cum[cuts[i]]))
        for i in range(s_count)
    )
    return WorkloadPlan(scheme=ROWS, assignments=assigns,
                        weights_replicated=True)


def space_cardinality(platform: Platform, n_tile_options: int) -> int:
    """Exact configuration count under the mode-uniformity constraint.

    Free flags (0,0) allow independent modes per sub-accelerator; the other
    three flag settings share one (tiling, kernel) pair but keep per-unit
    tile size indices. PE split and allocation scheme are configuration
    parameters, not searched, so they do not enter the count.
    """
    s = platform.num_subaccs
    n = n_tile_options
    per_unit = len(TILING_MODES) * len(KERNEL_MODES) * n
    free = per_unit ** s
    constrained = len(TILING_MODES) * len(KERNEL_MODES) * n ** s
    return free + 3 * constrained


def config_to_json(config: AccelConfig) -> str:
    return json.dumps(config.to_json_dict(), indent=2, sort_keys=True)


def config_from_json(text: str) -> AccelConfig:
    return AccelConfig.from_json_dict(json.loads(text))
