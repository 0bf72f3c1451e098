"""Turn a subnetwork plus dataset dimensions into accelerator workloads.

Each layer becomes an ordered list of matrix-multiply operations: an optional
attention prepass, the sparse aggregation, an optional GIN MLP pair, and the
dense combination. Sampling rates below one scale the sparse operand to its
expected kept nonzeros so a candidate's simulated latency is deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import RowProfile, SparseMatrix, sparsity_profile
from .supernet.space import PARAMETRIC_ATTENTION, SubnetSpec

PHASE_ATTENTION = "attention-prepass"
PHASE_AGGREGATION = "aggregation"
PHASE_GIN = "gin-mlp"
PHASE_COMBINATION = "combination"
PHASES = (PHASE_ATTENTION, PHASE_AGGREGATION, PHASE_GIN, PHASE_COMBINATION)


@dataclass
class MatmulOp:
    """One (M x K) @ (K x N) product plus its elementwise side work.

    Sparse left operands carry a per-row expected-nonzero vector (float: a
    sampling rate scales counts to expectations). ``csr`` optionally holds the
    exact matrix for precise per-tile statistics; it never serializes.
    """

    phase: str
    m: int
    k: int
    n: int
    left_sparse: bool = False
    row_nnz: np.ndarray | None = None  # length m, float64
    edge_op_count: int = 0
    csr: SparseMatrix | None = field(default=None, repr=False)
    sample_rate: float = 1.0  # off-diagonal keep probability already applied

    @property
    def nnz(self) -> float:
        return float(self.row_nnz.sum()) if self.left_sparse else self.m * self.k

    @property
    def mac_work(self) -> float:
        """Useful multiply-accumulates (elementwise edge work not included)."""
        if self.left_sparse:
            return float(self.row_nnz.sum()) * self.n
        return float(self.m) * self.k * self.n

    def to_json_dict(self, include_rows: bool = True) -> dict:
        d = {
            "phase": self.phase, "m": self.m, "k": self.k, "n": self.n,
            "left_sparse": self.left_sparse,
            "edge_op_count": self.edge_op_count,
            "mac_work": self.mac_work,
        }
        if self.left_sparse:
            d["total_nnz"] = float(self.row_nnz.sum())
            d["sample_rate"] = self.sample_rate
            if include_rows:
                d["row_nnz"] = [float(x) for x in self.row_nnz]
        return d


@dataclass
class LayerWorkload:
    """Ordered matmul ops of one layer plus its output dimensions."""

    layer: int
    ops: list
    out_rows: int
    out_cols: int

    def to_json_dict(self, include_rows: bool = True) -> dict:
        return {
            "layer": self.layer,
            "out_rows": self.out_rows,
            "out_cols": self.out_cols,
            "ops": [op.to_json_dict(include_rows) for op in self.ops],
        }


def analyze_sparsity(adj: SparseMatrix) -> RowProfile:
    """Accelerator-side alias of the graph-core row profile."""
    return sparsity_profile(adj)


def parse_subnet(subnet: SubnetSpec, num_nodes: int, in_features: int,
                 num_classes: int, profile: RowProfile,
                 support_csr: SparseMatrix | None = None) -> list[LayerWorkload]:
    """Phase-by-phase workload of a subnetwork on an ``num_nodes`` graph.

    ``profile`` describes the raw symmetrized adjacency without self loops;
    the aggregation operand adds one always-kept self loop per row and scales
    the off-diagonal counts by the layer's sampling rate. ``support_csr``,
    when given, is the support including self loops (e.g. the normalized
    adjacency) and enables exact per-tile statistics in the simulator.
    """
    if profile.num_rows != num_nodes:
        raise ValueError(
            f"profile has {profile.num_rows} rows, expected {num_nodes}"
        )
    n = num_nodes
    f_in = in_features
    layers: list[LayerWorkload] = []
    num_layers = len(subnet.layers)
    for l, choice in enumerate(subnet.layers):
        if choice.hidden_dim <= 0:
            raise ValueError(f"layer {l}: hidden dim must be positive")
        is_final = l == num_layers - 1
        out_dim = num_classes if is_final else choice.hidden_dim
        rate = float(choice.sampling_rate)
        row_nnz = 1.0 + rate * profile.per_row_nnz.astype(np.float64)
        eff_nnz = float(row_nnz.sum())
        ops: list[MatmulOp] = []

        if choice.attention in PARAMETRIC_ATTENTION:
            ops.append(MatmulOp(
                phase=PHASE_ATTENTION, m=n, k=f_in, n=2 * choice.heads,
                edge_op_count=int(round(3 * eff_nnz)) + n,
            ))

        ops.append(MatmulOp(
            phase=PHASE_AGGREGATION, m=n, k=n, n=f_in,
            left_sparse=True, row_nnz=row_nnz,
            csr=support_csr, sample_rate=rate,
        ))

        if choice.aggregation == "mlp":
            ops.append(MatmulOp(phase=PHASE_GIN, m=n, k=f_in,
                                n=choice.hidden_dim))
            ops.append(MatmulOp(phase=PHASE_GIN, m=n, k=choice.hidden_dim,
                                n=f_in))

        ops.append(MatmulOp(
            phase=PHASE_COMBINATION, m=n, k=f_in, n=out_dim,
            edge_op_count=2 * n if is_final else 0,
        ))

        layers.append(LayerWorkload(layer=l, ops=ops, out_rows=n,
                                    out_cols=out_dim))
        f_in = choice.hidden_dim if not is_final else out_dim
    return layers


def total_mac_work(workloads: list[LayerWorkload]) -> float:
    return sum(op.mac_work for lw in workloads for op in lw.ops)


def total_edge_ops(workloads: list[LayerWorkload]) -> int:
    return sum(op.edge_op_count for lw in workloads for op in lw.ops)


def workloads_to_json(workloads: list[LayerWorkload],
                      include_rows: bool = True) -> str:
    return json.dumps(
        {"layers": [lw.to_json_dict(include_rows) for lw in workloads]},
        indent=2, sort_keys=True,
    )


# large-graph descriptors enter only as synthetic simulator workloads: the
# profile stands in for a real adjacency, spread uniformly across columns
REDDIT_NUM_NODES = 232_965
REDDIT_AVG_DEGREE = 50


def synthetic_profile(num_nodes: int, avg_degree: float,
                      seed: int = 0) -> RowProfile:
    """Skewed (lognormal) integer degree profile with the requested mean."""
    rng = np.random.default_rng(seed)
    raw = rng.lognormal(mean=0.0, sigma=1.25, size=num_nodes)
    deg = np.maximum(1, np.round(raw * avg_degree / raw.mean())).astype(np.int64)
    total = int(deg.sum())
    return RowProfile(per_row_nnz=deg, total_nnz=total,
                      density=total / (num_nodes * num_nodes))


def reddit_synthetic_profile(seed: int = 0) -> RowProfile:
    return synthetic_profile(REDDIT_NUM_NODES, REDDIT_AVG_DEGREE, seed=seed)
