import json
from pathlib import Path

import numpy as np
import pytest

from gnnco.graph import DatasetSplit, Graph, SparseMatrix, load_planetoid, make_splits

DATA_DIR = Path(__file__).resolve().parents[1] / "data"
CORA_CONTENT = DATA_DIR / "cora" / "cora.content"
CORA_CITES = DATA_DIR / "cora" / "cora.cites"


def random_graph(n=10, f=5, c=3, seed=0, p=0.4) -> Graph:
    """Connected-ish undirected test graph with continuous features."""
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, 1)
    rows, cols = np.nonzero(upper | upper.T)
    adj = SparseMatrix.from_edges(n, rows, cols)
    return Graph(
        num_nodes=n,
        num_edges=len(rows) // 2,
        features=rng.normal(size=(n, f)),
        labels=rng.integers(0, c, n),
        num_classes=c,
        adjacency=adj,
        splits=DatasetSplit(np.arange(n), np.array([], dtype=np.int64),
                            np.array([], dtype=np.int64)),
    )


def graph_from_edges(n, edges, f=2, c=2, seed=0) -> Graph:
    rng = np.random.default_rng(seed)
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    adj = SparseMatrix.from_edges(
        n, np.concatenate([e[:, 0], e[:, 1]]),
        np.concatenate([e[:, 1], e[:, 0]]))
    return Graph(
        num_nodes=n, num_edges=len(e),
        features=rng.normal(size=(n, f)),
        labels=rng.integers(0, c, n),
        num_classes=c, adjacency=adj,
        splits=DatasetSplit(np.arange(n), np.array([], dtype=np.int64),
                            np.array([], dtype=np.int64)),
    )


@pytest.fixture(scope="session")
def cora():
    g = load_planetoid(CORA_CONTENT, CORA_CITES)
    return g.with_splits(make_splits(g, 140, 500, 1000, seed=0))


@pytest.fixture()
def tiny_planetoid(tmp_path):
    """The 3-node fixture: ids a,b,c; 2 binary features; cites a->b, b->c."""
    content = tmp_path / "tiny.content"
    cites = tmp_path / "tiny.cites"
    content.write_text("a\t1\t0\tphysics\nb\t0\t1\tbiology\nc\t1\t1\tphysics\n")
    cites.write_text("a\tb\nb\tc\n")
    return content, cites


@pytest.fixture()
def json_graph_path(tmp_path):
    payload = {
        "num_nodes": 4,
        "edges": [[0, 1], [1, 2], [2, 3]],
        "features": [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]],
        "labels": [0, 1, 0, 1],
    }
    path = tmp_path / "graph.json"
    path.write_text(json.dumps(payload))
    return path
