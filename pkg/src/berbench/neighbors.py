"""Exact brute-force nearest-neighbor engine.

Distances are evaluated pair by pair as written in :func:`pairwise_distance`
(float64 throughout, linear accumulation over coordinates), and the blocked
engine reproduces that scalar path bit for bit: query blocks only partition
the output, and each (query, reference) entry is reduced over its own
contiguous coordinate lane.  Results therefore do not depend on block sizes
or on the number of worker threads.

Top-k selection extracts neighbors by repeated row-wise ``argmin``, which
yields ascending distances with ties broken by the smaller reference index.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .data import Dataset

Metric = Literal["squared_euclidean", "cosine"]
QueryMode = Literal["standard", "loo"]

# Working-set knobs (elements, not bytes). Results are independent of both.
_DIST_BLOCK_ELEMENTS = 4_000_000
_DIFF_BLOCK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class NeighborList:
    """Per-query neighbor indices and distances, each row sorted ascending."""

    indices: np.ndarray  # (m, k) int64
    distances: np.ndarray  # (m, k) float64

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def head(self, k: int) -> "NeighborList":
        """First ``k`` neighbors; exact because rows are fully sorted."""
        if k > self.k:
            raise ValueError(f"asked for k={k} from a k={self.k} list")
        return NeighborList(self.indices[:, :k], self.distances[:, :k])


def _check_metric(metric: str) -> str:
    if metric not in ("squared_euclidean", "cosine"):
        raise ValueError(f"unknown metric {metric!r}")
    return metric


def pairwise_distance(a: np.ndarray, b: np.ndarray, metric: Metric = "squared_euclidean") -> float:
    """Distance between two vectors; the semantic reference for the engine.

    ``squared_euclidean`` is ``sum((a_i - b_i)^2)``; ``cosine`` is
    ``1 - a.b / (|a| |b|)`` in ``[0, 2]``, defined as 1 when either vector
    has zero norm.
    """
    _check_metric(metric)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if metric == "squared_euclidean":
        diff = a - b
        return float(np.einsum("i,i->", diff, diff))
    na = np.sqrt(np.einsum("i,i->", a, a))
    nb = np.sqrt(np.einsum("i,i->", b, b))
    if na == 0.0 or nb == 0.0:
        return 1.0
    return float(1.0 - np.einsum("i,i->", a, b) / (na * nb))


def _row_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def _sq_dist_rows(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """(qb, n) squared euclidean distances, bitwise equal to the scalar path."""
    qb, d = queries.shape
    n = refs.shape[0]
    out = np.empty((qb, n))
    rb = max(1, _DIFF_BLOCK_ELEMENTS // max(1, qb * d))
    for j in range(0, n, rb):
        block = refs[j : j + rb]
        diff = queries[:, None, :] - block[None, :, :]
        out[:, j : j + block.shape[0]] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _cosine_dist_rows(
    queries: np.ndarray, refs: np.ndarray, q_norms: np.ndarray, r_norms: np.ndarray
) -> np.ndarray:
    qb = queries.shape[0]
    n = refs.shape[0]
    out = np.empty((qb, n))
    rb = max(1, _DIFF_BLOCK_ELEMENTS // max(1, queries.shape[1]))
    denom_q = q_norms[:, None]
    for j in range(0, n, rb):
        block = refs[j : j + rb]
        dots = np.einsum("ik,jk->ij", queries, block)
        denom = denom_q * r_norms[None, j : j + block.shape[0]]
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.where(denom > 0.0, dots / denom, 0.0)
        out[:, j : j + block.shape[0]] = 1.0 - cos
    return out


def squared_distances(queries: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Full (m, n) squared-euclidean matrix in float64 (inputs promoted)."""
    q = np.asarray(queries, dtype=np.float64)
    r = np.asarray(refs, dtype=np.float64)
    if q.shape[1] != r.shape[1]:
        raise ValueError(f"dimension mismatch: {q.shape[1]} vs {r.shape[1]}")
    qb = max(1, _DIST_BLOCK_ELEMENTS // max(1, r.shape[0]))
    out = np.empty((q.shape[0], r.shape[0]))
    for i in range(0, q.shape[0], qb):
        out[i : i + qb] = _sq_dist_rows(q[i : i + qb], r)
    return out


def _topk_rows(dist_rows: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    # Mutates dist_rows. argmin returns the first minimum, so equal distances
    # resolve to the smaller reference index, in extraction order.
    qb = dist_rows.shape[0]
    rows = np.arange(qb)
    idx = np.empty((qb, k), dtype=np.int64)
    val = np.empty((qb, k))
    for j in range(k):
        am = dist_rows.argmin(axis=1)
        idx[:, j] = am
        val[:, j] = dist_rows[rows, am]
        dist_rows[rows, am] = np.inf
    return idx, val


def knn_query(
    reference: np.ndarray,
    queries: np.ndarray,
    k: int,
    metric: Metric = "squared_euclidean",
    mode: QueryMode = "standard",
    threads: int = 1,
) -> NeighborList:
    """Exact k nearest references for every query row.

    In ``loo`` mode the queries must be the reference matrix itself; each
    query's own index is excluded, so ``k <= n - 1``.  Ties are broken by the
    smaller reference index.
    """
    _check_metric(metric)
    ref = np.asarray(reference, dtype=np.float64)
    qry = ref if queries is reference else np.asarray(queries, dtype=np.float64)
    if ref.ndim != 2 or qry.ndim != 2 or ref.shape[1] != qry.shape[1]:
        raise ValueError(f"bad shapes: reference {ref.shape}, queries {qry.shape}")
    n = ref.shape[0]
    m = qry.shape[0]
    if mode == "loo":
        if m != n:
            raise ValueError("loo mode requires queries to be the reference set itself")
        if not 1 <= k <= n - 1:
            raise ValueError(f"loo mode needs 1 <= k <= n-1 = {n - 1}, got {k}")
    elif mode == "standard":
        if not 1 <= k <= n:
            raise ValueError(f"need 1 <= k <= n = {n}, got {k}")
    else:
        raise ValueError(f"unknown query mode {mode!r}")

    if metric == "cosine":
        r_norms = _row_norms(ref)
        q_norms = r_norms if qry is ref else _row_norms(qry)

    out_idx = np.empty((m, k), dtype=np.int64)
    out_val = np.empty((m, k))
    qb = max(1, _DIST_BLOCK_ELEMENTS // max(1, n))

    def work(start: int) -> None:
        stop = min(start + qb, m)
        q_block = qry[start:stop]
        if metric == "squared_euclidean":
            rows = _sq_dist_rows(q_block, ref)
        else:
            rows = _cosine_dist_rows(q_block, ref, q_norms[start:stop], r_norms)
        if mode == "loo":
            rows[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out_idx[start:stop], out_val[start:stop] = _topk_rows(rows, k)

    starts = range(0, m, qb)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)
    return NeighborList(out_idx, out_val)


def neighbor_label_counts(nl: NeighborList, labels: np.ndarray, c: int) -> np.ndarray:
    """Per-query class counts ``k_y`` among the listed neighbors; rows sum to k."""
    labels = np.asarray(labels, dtype=np.int64)
    nbr = labels[nl.indices]
    m, k = nbr.shape
    counts = np.zeros((m, c), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(m), k), nbr.ravel()), 1)
    return counts


def majority_vote(nl: NeighborList, labels: np.ndarray, c: int) -> np.ndarray:
    """Predicted class per query from its neighbor list.

    Vote ties go to the class whose nearest neighbor comes first in the
    (distance, index)-sorted list, then to the smaller class index.
    """
    labels = np.asarray(labels, dtype=np.int64)
    nbr = labels[nl.indices]
    m, k = nbr.shape
    counts = np.zeros((m, c), dtype=np.int64)
    rows = np.arange(m)
    first_pos = np.full((m, c), k, dtype=np.int64)
    for j in range(k - 1, -1, -1):
        first_pos[rows, nbr[:, j]] = j
    np.add.at(counts, (np.repeat(rows, k), nbr.ravel()), 1)
    best = counts.max(axis=1, keepdims=True)
    contender_pos = np.where(counts == best, first_pos, k + 1)
    return contender_pos.argmin(axis=1)


def knn_error(
    train: Dataset,
    eval_: Dataset,
    k: int,
    metric: Metric = "squared_euclidean",
    mode: QueryMode = "standard",
    threads: int = 1,
    neighbors: NeighborList | None = None,
) -> float:
    """Fraction of eval points whose majority-vote label differs from the truth.

    ``standard`` mode classifies eval queries against the train references
    (resubstitution when the splits are the same dataset); ``loo`` mode
    requires ``train`` and ``eval_`` to be the same set and excludes each
    query's own index.  A precomputed ``neighbors`` list for the same
    geometry may be supplied; only its first ``k`` columns are used.
    """
    if train.num_classes != eval_.num_classes:
        raise ValueError("class counts differ between splits")
    if eval_.n == 0:
        raise ValueError("empty eval set")
    if mode == "loo" and not (
        train.features is eval_.features or np.array_equal(train.features, eval_.features)
    ):
        raise ValueError("loo mode requires train and eval to be the same set")
    if neighbors is None:
        neighbors = knn_query(train.features, eval_.features, k, metric, mode, threads)
    predicted = majority_vote(neighbors.head(k), train.labels, train.num_classes)
    return float(np.mean(predicted != eval_.labels))
