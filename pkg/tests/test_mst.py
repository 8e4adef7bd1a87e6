import numpy as np
import pytest

from berbench.mst import build_mst, dichotomous_counts, dichotomous_fraction_stat


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def kruskal_oracle(points):
    """Independent MST oracle over the explicit all-pairs edge list."""
    n = len(points)
    edges = []
    for u in range(n):
        for v in range(u + 1, n):
            diff = np.asarray(points[u], dtype=np.float64) - np.asarray(points[v], dtype=np.float64)
            edges.append((float(np.dot(diff, diff)), u, v))
    edges.sort()
    uf = UnionFind(n)
    chosen = []
    for w2, u, v in edges:
        if uf.union(u, v):
            chosen.append((u, v, w2))
    return chosen


class TestBuildMst:
    def test_collinear_example(self):
        edges = build_mst(np.array([[0.0], [1.0], [10.0], [11.0]]))
        pairs = {(e.u, e.v) for e in edges}
        assert pairs == {(0, 1), (1, 2), (2, 3)}
        assert sorted(e.weight for e in edges) == [1.0, 1.0, 9.0]
        assert sum(e.weight for e in edges) == 11.0

    def test_two_points(self):
        edges = build_mst(np.array([[0.0, 0.0], [3.0, 4.0]]))
        assert len(edges) == 1
        assert edges[0] == (0, 1, 5.0)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            build_mst(np.array([[1.0, 2.0]]))

    @pytest.mark.parametrize("n,d,seed", [(30, 2, 0), (120, 3, 1), (200, 5, 2)])
    def test_matches_kruskal_weight_multiset(self, n, d, seed):
        rng = np.random.default_rng(seed)
        points = rng.normal(size=(n, d)).astype(np.float32)
        edges = build_mst(points)
        oracle = kruskal_oracle(points)
        assert len(edges) == n - 1
        # every MST shares the same sorted weight sequence; compare exactly
        ours = sorted(e.weight**2 for e in edges)
        theirs = sorted(w2 for _, _, w2 in oracle)
        assert np.allclose(ours, theirs, rtol=1e-12, atol=0)
        assert sum(ours) == pytest.approx(sum(theirs), rel=1e-12)

    def test_spanning_and_acyclic(self):
        rng = np.random.default_rng(3)
        points = rng.normal(size=(150, 2)).astype(np.float32)
        edges = build_mst(points)
        uf = UnionFind(150)
        for e in edges:
            assert e.u != e.v
            assert uf.union(e.u, e.v), "cycle detected"
        root = uf.find(0)
        assert all(uf.find(i) == root for i in range(150))

    def test_deterministic_under_ties(self):
        # unit grid has many tied edges
        xs, ys = np.meshgrid(np.arange(5.0), np.arange(5.0))
        points = np.stack([xs.ravel(), ys.ravel()], axis=1)
        a = build_mst(points)
        b = build_mst(points)
        assert a == b
        assert sum(e.weight for e in a) == 24.0  # 24 unit edges


class TestDichotomousCounts:
    def test_collinear_example(self):
        edges = build_mst(np.array([[0.0], [1.0], [10.0], [11.0]]))
        counts = dichotomous_counts(edges, np.array([0, 0, 1, 1]), 2)
        assert counts[0, 1] == 1
        assert counts[1, 0] == 1
        assert counts[0, 0] == 1 and counts[1, 1] == 1

    def test_all_same_label(self):
        edges = build_mst(np.arange(10.0).reshape(-1, 1))
        counts = dichotomous_counts(edges, np.zeros(10, dtype=int), 3)
        assert counts[0, 0] == 9
        assert counts.sum() == 9

    def test_pair_totals_cover_all_edges(self):
        rng = np.random.default_rng(4)
        points = rng.normal(size=(80, 2))
        labels = rng.integers(0, 4, size=80)
        counts = dichotomous_counts(build_mst(points), labels, 4)
        total = np.triu(counts).sum()
        assert total == 79
        assert np.array_equal(counts, counts.T)

    def test_uniform_labels_fraction(self):
        rng = np.random.default_rng(5)
        n, c = 5000, 4
        points = rng.normal(size=(n, 2)).astype(np.float32)
        labels = rng.integers(0, c, size=n)
        counts = dichotomous_counts(build_mst(points), labels, c)
        dichotomous = (counts.sum() - np.trace(counts)) / 2
        frac = dichotomous / (n - 1)
        std = np.sqrt((1 / c) * (1 - 1 / c) / (n - 1))
        assert abs(frac - (c - 1) / c) <= 4 * std

    def test_separable_clusters_few_dichotomous(self, separable_clusters):
        ds = separable_clusters
        counts = dichotomous_counts(build_mst(ds.features), ds.labels, ds.num_classes)
        dichotomous = (counts.sum() - np.trace(counts)) / 2
        assert dichotomous <= ds.num_classes - 1

    def test_fraction_stat(self):
        counts = np.array([[3, 2], [2, 5]])
        assert dichotomous_fraction_stat(counts, 11) == pytest.approx(2 / 22)
