"""Euclidean minimum spanning tree over all samples, and class-pair edge counts.

The complete graph on n points has n(n-1)/2 edges, so an explicit edge list
is out of reach at n ~ 1e5.  Prim's algorithm with a running best-distance
array runs in O(n^2) time and O(n) memory, the standard dense-graph choice.
Comparisons use squared distances (the square is monotone, so the tree is
unchanged); reported edge weights take the root only at emission.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class MstEdge(NamedTuple):
    u: int
    v: int
    weight: float  # euclidean distance, u < v


def build_mst(features: np.ndarray) -> list[MstEdge]:
    """Minimum spanning tree of the complete Euclidean graph on the rows.

    Deterministic: when candidate edges tie, the vertex with the smallest
    index is attached next and the earliest-seen parent is kept, so repeated
    builds select the same tree.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-d, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples to span a tree, got {n}")

    in_tree = np.zeros(n, dtype=bool)
    best_d2 = np.full(n, np.inf)
    best_parent = np.full(n, -1, dtype=np.int64)
    in_tree[0] = True
    current = 0
    edges: list[MstEdge] = []
    for _ in range(n - 1):
        diff = x - x[current]
        d2 = np.einsum("ij,ij->i", diff, diff)
        closer = ~in_tree & (d2 < best_d2)
        best_d2[closer] = d2[closer]
        best_parent[closer] = current
        candidates = np.where(in_tree, np.inf, best_d2)
        nxt = int(candidates.argmin())
        parent = int(best_parent[nxt])
        u, v = (parent, nxt) if parent < nxt else (nxt, parent)
        edges.append(MstEdge(u, v, float(np.sqrt(best_d2[nxt]))))
        in_tree[nxt] = True
        current = nxt
    return edges


def dichotomous_counts(edges: list[MstEdge], labels: np.ndarray, c: int) -> np.ndarray:
    """Symmetric (c, c) matrix of MST edge counts by endpoint class pair.

    Off-diagonal entries count dichotomous edges (different endpoint labels),
    the diagonal counts same-class edges; entries over unordered pairs sum to
    n - 1.
    """
    labels = np.asarray(labels, dtype=np.int64)
    u = np.fromiter((e.u for e in edges), dtype=np.int64, count=len(edges))
    v = np.fromiter((e.v for e in edges), dtype=np.int64, count=len(edges))
    if len(edges) and (u.max() >= labels.shape[0] or v.max() >= labels.shape[0]):
        raise ValueError("edge endpoint out of range for the label vector")
    counts = np.zeros((c, c), dtype=np.int64)
    lu, lv = labels[u], labels[v]
    np.add.at(counts, (lu, lv), 1)
    off_diag = lu != lv
    np.add.at(counts, (lv[off_diag], lu[off_diag]), 1)
    return counts


def dichotomous_fraction_stat(counts: np.ndarray, n: int) -> float:
    """Divergence statistic: dichotomous edges over ``2n``."""
    dichotomous = (counts.sum() - np.trace(counts)) // 2
    return float(dichotomous) / (2.0 * n)
