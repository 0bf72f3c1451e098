import numpy as np
import pytest

from gnnco.errors import DegenerateDegreeError, GraphFormatError, GraphParseError
from gnnco.graph import (
    SparseMatrix,
    build_normalized_adjacency,
    load_json_graph,
    load_planetoid,
    make_splits,
    sparsity_profile,
)

from conftest import graph_from_edges, random_graph


def dense_normalized(adj_dense: np.ndarray, self_loops: bool = True):
    """Independent dense-path oracle for D^-1/2 (A+I) D^-1/2."""
    a = adj_dense.copy().astype(float)
    if self_loops:
        a = np.minimum(a + np.eye(len(a)), 1.0)
    d = a.sum(axis=1)
    dinv = np.diag(1.0 / np.sqrt(d))
    return dinv @ a @ dinv


class TestLoadPlanetoid:
    def test_three_node_fixture(self, tiny_planetoid):
        g = load_planetoid(*tiny_planetoid)
        assert g.num_nodes == 3
        assert g.num_edges == 2
        assert g.adjacency.nnz == 4  # symmetric, no self loops
        assert g.num_features == 2
        # labels in first-appearance order: physics=0, biology=1
        assert g.labels.tolist() == [0, 1, 0]
        assert g.num_classes == 2
        np.testing.assert_array_equal(g.features,
                                      [[1, 0], [0, 1], [1, 1]])

    def test_citeseer_width_content(self, tmp_path):
        # synthetic file at the CiteSeer feature width
        f = 3703
        lines = []
        for i in range(3):
            feats = "\t".join("1" if j % (i + 2) == 0 else "0"
                              for j in range(f))
            lines.append(f"n{i}\t{feats}\tAgents")
        content = tmp_path / "cs.content"
        content.write_text("\n".join(lines) + "\n")
        cites = tmp_path / "cs.cites"
        cites.write_text("n0\tn1\n")
        g = load_planetoid(content, cites)
        assert g.num_features == 3703

    def test_unknown_ids_dropped_with_warning(self, tiny_planetoid, caplog):
        content, cites = tiny_planetoid
        cites.write_text("a\tb\nb\tc\nzz\ta\nb\tyy\n")
        with caplog.at_level("WARNING"):
            g = load_planetoid(content, cites)
        assert g.num_edges == 2
        assert any("dropped 2 edges" in rec.getMessage()
                   for rec in caplog.records)

    def test_inconsistent_feature_count(self, tmp_path):
        content = tmp_path / "bad.content"
        content.write_text("a\t1\t0\tx\nb\t1\ty\n")
        cites = tmp_path / "bad.cites"
        cites.write_text("")
        with pytest.raises(GraphFormatError, match="2"):
            load_planetoid(content, cites)

    def test_malformed_line_has_line_number(self, tmp_path):
        content = tmp_path / "bad.content"
        content.write_text("a\t1\t0\tx\nb\toops\tnot_a_number\ty\n")
        cites = tmp_path / "bad.cites"
        cites.write_text("")
        with pytest.raises(GraphParseError, match=":2"):
            load_planetoid(content, cites)

    def test_duplicate_edges_deduplicated(self, tiny_planetoid):
        content, cites = tiny_planetoid
        cites.write_text("a\tb\na\tb\nb\ta\nb\tc\n")
        g = load_planetoid(content, cites)
        assert g.num_edges == 2
        assert np.all(g.adjacency.values == 1.0)


class TestJsonGraph:
    def test_load(self, json_graph_path):
        g = load_json_graph(json_graph_path)
        assert g.num_nodes == 4
        assert g.num_edges == 3
        assert g.num_classes == 2

    def test_bad_edge_index(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"num_nodes": 2, "edges": [[0, 5]], '
                     '"features": [[1], [1]], "labels": [0, 1]}')
        with pytest.raises(GraphFormatError):
            load_json_graph(p)


class TestNormalizedAdjacency:
    def test_two_node_path(self):
        g = graph_from_edges(2, [[0, 1]])
        ah = build_normalized_adjacency(g)
        np.testing.assert_allclose(ah.to_dense(), np.full((2, 2), 0.5))

    def test_triangle(self):
        g = graph_from_edges(3, [[0, 1], [1, 2], [0, 2]])
        ah = build_normalized_adjacency(g)
        np.testing.assert_allclose(ah.to_dense(), np.full((3, 3), 1.0 / 3))

    def test_star_k13(self):
        g = graph_from_edges(4, [[0, 1], [0, 2], [0, 3]])
        ah = build_normalized_adjacency(g).to_dense()
        # center degree 4 (with loop), leaves degree 2
        assert ah[0, 1] == pytest.approx(1.0 / np.sqrt(8.0))
        assert ah[0, 1] == pytest.approx(0.35355, abs=1e-5)
        assert ah[1, 1] == pytest.approx(0.5)

    def test_isolated_node_without_loops(self):
        g = graph_from_edges(3, [[0, 1]])
        with pytest.raises(DegenerateDegreeError):
            build_normalized_adjacency(g, add_self_loops=False)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_dense_oracle(self, seed):
        n = int(np.random.default_rng(seed).integers(2, 51))
        g = random_graph(n=n, seed=seed, p=0.3)
        ah = build_normalized_adjacency(g).to_dense()
        ref = dense_normalized(g.adjacency.to_dense())
        np.testing.assert_allclose(ah, ref, atol=1e-12)

    def test_symmetrization_idempotent(self, tiny_planetoid):
        g = load_planetoid(*tiny_planetoid)
        a = g.adjacency
        rows = np.repeat(np.arange(a.num_rows), a.row_nnz())
        again = SparseMatrix.from_edges(
            a.num_rows,
            np.concatenate([rows, a.col_idx]),
            np.concatenate([a.col_idx, rows]),
        )
        # duplicate summation inflates values; structure must be identical
        np.testing.assert_array_equal(again.row_ptr, a.row_ptr)
        np.testing.assert_array_equal(again.col_idx, a.col_idx)


class TestSparsityProfile:
    def test_identity(self):
        eye = SparseMatrix.from_edges(3, np.arange(3), np.arange(3))
        p = sparsity_profile(eye)
        assert p.per_row_nnz.tolist() == [1, 1, 1]
        assert p.density == pytest.approx(1.0 / 3)

    def test_triangle_with_loops(self):
        g = graph_from_edges(3, [[0, 1], [1, 2], [0, 2]])
        ah = build_normalized_adjacency(g)
        p = sparsity_profile(ah)
        assert p.per_row_nnz.tolist() == [3, 3, 3]

    def test_total(self):
        rows, cols = [], []
        for r, k in enumerate((10, 10, 10, 70)):
            rows += [r] * k
            cols += list(range(k))
        m = SparseMatrix.from_edges(70, np.asarray(rows), np.asarray(cols))
        assert sparsity_profile(m).total_nnz == 100

    def test_totals_match_nnz_random(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 20))
            k = int(rng.integers(0, n * n + 1))
            flat = rng.choice(n * n, size=k, replace=False)
            m = SparseMatrix.from_edges(n, flat // n, flat % n)
            assert sparsity_profile(m).total_nnz == m.nnz


class TestMakeSplits:
    def test_sizes_disjoint(self):
        g = random_graph(n=10, seed=1)
        for seed in (0, 1, 7):
            s = make_splits(g, 4, 3, 3, seed=seed)
            assert len(s.train_mask) == 4
            assert len(s.val_mask) == 3
            assert len(s.test_mask) == 3
            all_idx = np.concatenate([s.train_mask, s.val_mask, s.test_mask])
            assert len(np.unique(all_idx)) == 10

    def test_cora_default_split(self, cora):
        s = cora.splits
        assert (len(s.train_mask), len(s.val_mask), len(s.test_mask)) == \
            (140, 500, 1000)
        # seed-0 convention is class balanced
        assert np.bincount(cora.labels[s.train_mask]).tolist() == [20] * 7

    def test_all_train(self):
        g = random_graph(n=6, seed=2)
        s = make_splits(g, 6, 0, 0, seed=3)
        assert sorted(s.train_mask.tolist()) == list(range(6))

    def test_counts_exceeding_nodes(self):
        g = random_graph(n=5, seed=0)
        with pytest.raises(ValueError):
            make_splits(g, 4, 1, 1, seed=0)

    def test_deterministic(self):
        g = random_graph(n=30, seed=4)
        a = make_splits(g, 10, 10, 10, seed=9)
        b = make_splits(g, 10, 10, 10, seed=9)
        np.testing.assert_array_equal(a.train_mask, b.train_mask)
        np.testing.assert_array_equal(a.test_mask, b.test_mask)
