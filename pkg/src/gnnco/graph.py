"""Graph datasets: loading, normalized adjacency, sparsity profiles, splits.

Graphs are undirected node-classification datasets held as immutable value
objects. The adjacency is stored in compressed sparse row form; the off-chip
COO accounting used by the performance model lives in the simulator, not here.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import (
    DegenerateDegreeError,
    GraphFormatError,
    GraphParseError,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SparseMatrix:
    """Square sparse matrix in CSR form with sorted, deduplicated columns."""

    num_rows: int
    row_ptr: np.ndarray  # int64, length num_rows + 1
    col_idx: np.ndarray  # int64, length nnz
    values: np.ndarray   # float64, length nnz

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[-1])

    def validate(self) -> None:
        if self.row_ptr.shape != (self.num_rows + 1,):
            raise GraphFormatError("row_ptr length must be num_rows + 1")
        if np.any(np.diff(self.row_ptr) < 0):
            raise GraphFormatError("row_ptr must be non-decreasing")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != len(self.col_idx):
            raise GraphFormatError("row_ptr endpoints inconsistent with nnz")
        if len(self.col_idx) and (
            self.col_idx.min() < 0 or self.col_idx.max() >= self.num_rows
        ):
            raise GraphFormatError("column index out of range")
        for r in range(self.num_rows):
            cols = self.col_idx[self.row_ptr[r]:self.row_ptr[r + 1]]
            if np.any(np.diff(cols) <= 0):
                raise GraphFormatError(f"row {r}: columns not strictly increasing")

    @classmethod
    def from_edges(
        cls,
        num_rows: int,
        rows: np.ndarray,
        cols: np.ndarray,
        values: np.ndarray | None = None,
    ) -> "SparseMatrix":
        """Build from (row, col) pairs; duplicates are summed then deduplicated."""
        if values is None:
            values = np.ones(len(rows), dtype=np.float64)
        m = sp.coo_matrix(
            (values, (rows, cols)), shape=(num_rows, num_rows)
        ).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(
            num_rows=num_rows,
            row_ptr=m.indptr.astype(np.int64),
            col_idx=m.indices.astype(np.int64),
            values=m.data.astype(np.float64),
        )

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_idx, self.row_ptr),
            shape=(self.num_rows, self.num_rows),
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_ptr)


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/val/test node index sets."""

    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def validate(self, num_nodes: int) -> None:
        masks = [self.train_mask, self.val_mask, self.test_mask]
        all_idx = np.concatenate(masks) if any(len(m) for m in masks) else np.array([])
        if len(all_idx) != len(np.unique(all_idx)):
            raise GraphFormatError("split masks overlap")
        if len(all_idx) and (all_idx.min() < 0 or all_idx.max() >= num_nodes):
            raise GraphFormatError("split index out of range")
        if len(self.train_mask) == 0:
            raise GraphFormatError("train mask must be non-empty")


@dataclass(frozen=True)
class RowProfile:
    """Per-row nonzero counts of a sparse matrix plus aggregate density."""

    per_row_nnz: np.ndarray
    total_nnz: int
    density: float

    @property
    def num_rows(self) -> int:
        return len(self.per_row_nnz)


@dataclass(frozen=True)
class Graph:
    """An undirected node-classification dataset."""

    num_nodes: int
    num_edges: int  # undirected edge count (each pair counted once)
    features: np.ndarray  # N x F0 float64
    labels: np.ndarray    # N int64
    num_classes: int
    adjacency: SparseMatrix  # symmetric, no self loops unless present in data
    splits: DatasetSplit

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def with_splits(self, splits: DatasetSplit) -> "Graph":
        splits.validate(self.num_nodes)
        return replace(self, splits=splits)


def _symmetrize(num_nodes: int, rows: np.ndarray, cols: np.ndarray) -> SparseMatrix:
    """Undirected closure: keep each (i,j) and (j,i) once, self-pairs once."""
    r = np.concatenate([rows, cols])
    c = np.concatenate([cols, rows])
    keys = np.unique(r * num_nodes + c)
    return SparseMatrix.from_edges(
        num_nodes,
        keys // num_nodes,
        keys % num_nodes,
        np.ones(len(keys), dtype=np.float64),
    )


def _default_split(num_nodes: int) -> DatasetSplit:
    return DatasetSplit(
        train_mask=np.arange(num_nodes, dtype=np.int64),
        val_mask=np.array([], dtype=np.int64),
        test_mask=np.array([], dtype=np.int64),
    )


def load_planetoid(
    content_path, cites_path, normalize_features: bool = False
) -> Graph:
    """Load a raw citation dataset (one `<id> <f..> <label>` line per node).

    Node ids map to dense indices in file order; label strings map to class
    indices in first-appearance order; citation edges are symmetrized and
    deduplicated, and edges naming unknown ids are dropped with a warning.
    """
    ids: dict[str, int] = {}
    feats: list[np.ndarray] = []
    labels: list[int] = []
    label_ids: dict[str, int] = {}
    num_feats = -1
    with open(content_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise GraphParseError(
                    "expected <id> <features...> <label>", str(content_path), lineno
                )
            node_id, label = parts[0], parts[-1]
            if num_feats < 0:
                num_feats = len(parts) - 2
            elif len(parts) - 2 != num_feats:
                raise GraphFormatError(
                    f"{content_path}:{lineno}: expected {num_feats} features, "
                    f"got {len(parts) - 2}"
                )
            if node_id in ids:
                raise GraphParseError(
                    f"duplicate node id {node_id!r}", str(content_path), lineno
                )
            ids[node_id] = len(ids)
            try:
                feats.append(np.asarray(parts[1:-1], dtype=np.float64))
            except ValueError as exc:
                raise GraphParseError(str(exc), str(content_path), lineno) from exc
            labels.append(label_ids.setdefault(label, len(label_ids)))

    n = len(ids)
    src: list[int] = []
    dst: list[int] = []
    dropped = 0
    with open(cites_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise GraphParseError(
                    "expected <target_id> <source_id>", str(cites_path), lineno
                )
            a, b = parts
            if a not in ids or b not in ids:
                dropped += 1
                continue
            src.append(ids[a])
            dst.append(ids[b])
    if dropped:
        log.warning("%s: dropped %d edges referencing unknown node ids",
                    cites_path, dropped)

    x = np.vstack(feats) if feats else np.zeros((0, max(num_feats, 0)))
    if normalize_features:
        x = normalize_feature_rows(x)
    adj = _symmetrize(n, np.asarray(src, dtype=np.int64),
                      np.asarray(dst, dtype=np.int64))
    undirected = _undirected_edge_count(adj)
    return Graph(
        num_nodes=n,
        num_edges=undirected,
        features=x,
        labels=np.asarray(labels, dtype=np.int64),
        num_classes=len(label_ids),
        adjacency=adj,
        splits=_default_split(n),
    )


def load_json_graph(path, normalize_features: bool = False) -> Graph:
    """Load the generic JSON graph format used for synthetic fixtures.

    Schema: ``{"num_nodes": int, "edges": [[i,j],...], "features": [[...],...],
    "labels": [...]}``.
    """
    with open(path) as fh:
        data = json.load(fh)
    try:
        n = int(data["num_nodes"])
        edges = np.asarray(data["edges"], dtype=np.int64).reshape(-1, 2)
        x = np.asarray(data["features"], dtype=np.float64)
        y = np.asarray(data["labels"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"{path}: {exc}") from exc
    if x.shape[0] != n or y.shape[0] != n:
        raise GraphFormatError(f"{path}: features/labels must have {n} rows")
    if len(edges) and (edges.min() < 0 or edges.max() >= n):
        raise GraphFormatError(f"{path}: edge endpoint out of range")
    if normalize_features:
        x = normalize_feature_rows(x)
    adj = _symmetrize(n, edges[:, 0], edges[:, 1])
    return Graph(
        num_nodes=n,
        num_edges=_undirected_edge_count(adj),
        features=x,
        labels=y,
        num_classes=int(y.max()) + 1 if len(y) else 0,
        adjacency=adj,
        splits=_default_split(n),
    )


def _undirected_edge_count(adj: SparseMatrix) -> int:
    diag = np.sum(
        adj.col_idx == np.repeat(np.arange(adj.num_rows), adj.row_nnz())
    )
    return int((adj.nnz - diag) // 2)


def normalize_feature_rows(x: np.ndarray) -> np.ndarray:
    """Scale each feature row to unit L1 norm (zero rows left unchanged)."""
    norms = np.abs(x).sum(axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return x / norms


def build_normalized_adjacency(g: Graph, add_self_loops: bool = True) -> SparseMatrix:
    """Return D^{-1/2} (A [+ I]) D^{-1/2} with degrees taken after insertion."""
    adj = g.adjacency
    rows = np.repeat(np.arange(adj.num_rows), adj.row_nnz())
    cols = adj.col_idx
    if add_self_loops:
        missing = np.setdiff1d(
            np.arange(adj.num_rows), rows[rows == cols], assume_unique=False
        )
        rows = np.concatenate([rows, missing])
        cols = np.concatenate([cols, missing])
    support = SparseMatrix.from_edges(adj.num_rows, rows, cols)
    deg = support.row_nnz().astype(np.float64)
    if np.any(deg == 0):
        isolated = int(np.argmax(deg == 0))
        raise DegenerateDegreeError(
            f"node {isolated} has degree 0; enable self loops or connect it"
        )
    inv_sqrt = 1.0 / np.sqrt(deg)
    r = np.repeat(np.arange(support.num_rows), support.row_nnz())
    vals = inv_sqrt[r] * inv_sqrt[support.col_idx]
    return SparseMatrix(
        num_rows=support.num_rows,
        row_ptr=support.row_ptr,
        col_idx=support.col_idx,
        values=vals,
    )


def sparsity_profile(s: SparseMatrix) -> RowProfile:
    """Per-row nonzero counts of ``s`` plus the total and global density."""
    per_row = s.row_nnz().astype(np.int64)
    total = int(per_row.sum())
    n = s.num_rows
    return RowProfile(
        per_row_nnz=per_row,
        total_nnz=total,
        density=total / (n * n) if n else 0.0,
    )


def make_splits(
    g: Graph, train_n: int, val_n: int, test_n: int, seed: int = 0
) -> DatasetSplit:
    """Deterministic dataset split.

    Seed 0 is the canonical convention: the first ``train_n`` nodes in
    class-balanced file order, then the next ``val_n``/``test_n`` nodes in
    index order. Any other seed takes the leading blocks of a seeded shuffle.
    """
    n = g.num_nodes
    if train_n + val_n + test_n > n:
        raise ValueError(
            f"split sizes {train_n}+{val_n}+{test_n} exceed {n} nodes"
        )
    if train_n <= 0:
        raise ValueError("train split must be non-empty")
    if seed == 0:
        quota = -(-train_n // max(g.num_classes, 1))
        counts = np.zeros(max(g.num_classes, 1), dtype=np.int64)
        train: list[int] = []
        for i in range(n):
            if len(train) == train_n:
                break
            c = g.labels[i]
            if counts[c] < quota:
                counts[c] += 1
                train.append(i)
        # classes may run out of nodes before the quota fills
        if len(train) < train_n:
            rest = np.setdiff1d(np.arange(n), np.asarray(train))
            train.extend(rest[: train_n - len(train)].tolist())
        train_idx = np.asarray(train, dtype=np.int64)
        remaining = np.setdiff1d(np.arange(n), train_idx)
        val_idx = remaining[:val_n]
        test_idx = remaining[val_n:val_n + test_n]
    else:
        order = np.random.default_rng(seed).permutation(n)
        train_idx = np.sort(order[:train_n])
        val_idx = np.sort(order[train_n:train_n + val_n])
        test_idx = np.sort(order[train_n + val_n:train_n + val_n + test_n])
    split = DatasetSplit(
        train_mask=np.asarray(train_idx, dtype=np.int64),
        val_mask=np.asarray(val_idx, dtype=np.int64),
        test_mask=np.asarray(test_idx, dtype=np.int64),
    )
    split.validate(n)
    return split
