"""Bayes-error-rate estimators behind a single ``estimate()`` interface.

Two families of split usage:

* train/eval estimators (``one_nn``, ``knn``, ``knn_extrapolate``,
  ``scaled_classifier``) fit on the train split and score on eval;
* single-set estimators (``knn_loo``, ``de_knn``, ``one_nn_knn``, ``kde``,
  ``ghp``) consume the eval split only and ignore train entirely.

All estimators return an :class:`~berbench.core.EstimateInterval` with
``lower <= upper``; single-value estimators collapse the interval.

A :class:`GeometryCache` can be shared across trials of an experiment grid:
label noise never touches features, so neighbor lists and spanning trees are
functions of the feature matrices alone and can be reused.  Cached and fresh
computations are identical by construction.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import EstimateInterval, cover_hart_lower, knn_lower, make_interval
from .data import Dataset, derive_seed, subsample
from .mst import MstEdge, build_mst, dichotomous_counts, dichotomous_fraction_stat
from .neighbors import (
    Metric,
    NeighborList,
    knn_error,
    knn_query,
    neighbor_label_counts,
    squared_distances,
)

Method = Literal[
    "one_nn",
    "knn",
    "knn_loo",
    "de_knn",
    "one_nn_knn",
    "kde",
    "ghp",
    "knn_extrapolate",
    "scaled_classifier",
]

METHODS: tuple[str, ...] = (
    "one_nn",
    "knn",
    "knn_loo",
    "de_knn",
    "one_nn_knn",
    "kde",
    "ghp",
    "knn_extrapolate",
    "scaled_classifier",
)

SINGLE_SET_METHODS = frozenset({"knn_loo", "de_knn", "one_nn_knn", "kde", "ghp"})

# Default hyper-parameter grids swept by the harness when a config does not
# pin values.  The kde bandwidths and the kNN-family k range are the standard
# sweeps; the wide [2, 100] k range of the counting estimators is subsampled.
DEFAULT_GRIDS: dict[str, dict[str, tuple]] = {
    "one_nn": {"metric": ("squared_euclidean", "cosine")},
    "knn": {"k": tuple(range(1, 11)), "metric": ("squared_euclidean", "cosine")},
    "knn_loo": {"k": tuple(range(1, 11)), "metric": ("squared_euclidean", "cosine")},
    "knn_extrapolate": {"k": tuple(range(1, 11)), "metric": ("squared_euclidean", "cosine")},
    "de_knn": {"k": (2, 3, 5, 10, 20, 50, 100), "metric": ("squared_euclidean", "cosine")},
    "one_nn_knn": {"k": (2, 3, 5, 10, 20, 50, 100), "metric": ("squared_euclidean", "cosine")},
    "kde": {"bandwidth": (0.0025, 0.05, 0.1, 0.25, 0.5)},
    "ghp": {},
    "scaled_classifier": {"scaling": (0.8, 0.95)},
}

_METRIC_LABEL = {"squared_euclidean": "squared_l2", "cosine": "cosine"}


class EstimatorError(Exception):
    """An estimator could not produce a valid estimate on this input."""


@dataclass(frozen=True)
class EstimatorConfig:
    """One fully-instantiated estimator variant.

    Only the fields a method consumes are meaningful; the rest stay None.
    ``schedule`` and ``expansion_dim`` default at run time (geometric
    schedule n/16 .. n, ambient feature dimension) when left unset.
    """

    method: Method
    k: int | None = None
    metric: Metric = "squared_euclidean"
    bandwidth: float | None = None
    scaling: float | None = None
    schedule: tuple[int, ...] | None = None
    expansion_dim: int | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown estimator method {self.method!r}")
        if self.metric not in ("squared_euclidean", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.method in ("knn", "knn_loo", "knn_extrapolate"):
            if self.k is None or self.k < 1:
                raise ValueError(f"{self.method} needs k >= 1, got {self.k}")
        if self.method in ("de_knn", "one_nn_knn"):
            if self.k is None or self.k < 2:
                raise ValueError(f"{self.method} needs k >= 2, got {self.k}")
        if self.method == "kde":
            if self.bandwidth is None or not self.bandwidth > 0:
                raise ValueError(f"kde needs bandwidth > 0, got {self.bandwidth}")
        if self.method == "scaled_classifier":
            if self.scaling is None or not 0.0 < self.scaling < 1.0:
                raise ValueError(f"scaled_classifier needs scaling in (0, 1), got {self.scaling}")
        if self.schedule is not None:
            sched = tuple(int(m) for m in self.schedule)
            if len(sched) < 3 or any(b <= a for a, b in zip(sched, sched[1:])):
                raise ValueError(f"schedule must be >= 3 strictly increasing sizes, got {sched}")
            object.__setattr__(self, "schedule", sched)

    def variant(self) -> str:
        """Canonical sorted key=value rendering, e.g. ``dist=cosine,k=2``."""
        parts: dict[str, str] = {}
        if self.method in ("one_nn", "knn", "knn_loo", "de_knn", "one_nn_knn", "knn_extrapolate"):
            parts["dist"] = _METRIC_LABEL[self.metric]
        if self.method in ("knn", "knn_loo", "de_knn", "one_nn_knn", "knn_extrapolate"):
            parts["k"] = str(self.k)
        if self.method == "kde":
            parts["B"] = format_float(self.bandwidth)
        if self.method == "scaled_classifier":
            parts["c"] = format_float(self.scaling)
        if self.method == "knn_extrapolate":
            if self.expansion_dim is not None:
                parts["d"] = str(self.expansion_dim)
            if self.schedule is not None:
                parts["schedule"] = "/".join(str(m) for m in self.schedule)
        if not parts:
            return "default"
        return ",".join(f"{key}={parts[key]}" for key in sorted(parts))


def format_float(x: float) -> str:
    """Shortest round-trip rendering, with integral floats kept compact."""
    return repr(float(x))


class GeometryCache:
    """Reusable feature-geometry products: neighbor lists and MST edges.

    Keys hold strong references to the keyed arrays, so ``id()`` identity is
    stable for the cache's lifetime.  Thread-safe; at most one computation
    runs per key.
    """

    def __init__(self, threads: int = 1) -> None:
        self.threads = threads
        self._lock = threading.Lock()
        self._neighbors: dict[tuple, NeighborList] = {}
        self._msts: dict[tuple, list[MstEdge]] = {}
        self._pinned: list[np.ndarray] = []
        self._wanted_k: dict[tuple, int] = {}

    def plan_k(self, reference: np.ndarray, queries: np.ndarray, metric: str, mode: str, k: int):
        """Register that ``k`` neighbors will be needed for this geometry.

        Call before running trials so one query pass serves every variant.
        """
        key = (id(reference), id(queries), metric, mode)
        with self._lock:
            self._pinned.extend((reference, queries))
            self._wanted_k[key] = max(k, self._wanted_k.get(key, 0))

    def neighbors(
        self, reference: np.ndarray, queries: np.ndarray, k: int, metric: str, mode: str
    ) -> NeighborList:
        key = (id(reference), id(queries), metric, mode)
        with self._lock:
            self._pinned.extend((reference, queries))
            cached = self._neighbors.get(key)
            if cached is None or cached.k < k:
                want = max(k, self._wanted_k.get(key, 0))
                cached = knn_query(reference, queries, want, metric, mode, self.threads)
                self._neighbors[key] = cached
        return cached.head(k)

    def mst(self, features: np.ndarray) -> list[MstEdge]:
        key = (id(features),)
        with self._lock:
            self._pinned.append(features)
            edges = self._msts.get(key)
            if edges is None:
                edges = build_mst(features)
                self._msts[key] = edges
        return edges


def _neighbors_for(
    cache: GeometryCache | None,
    reference: np.ndarray,
    queries: np.ndarray,
    k: int,
    metric: str,
    mode: str,
) -> NeighborList:
    if cache is not None:
        return cache.neighbors(reference, queries, k, metric, mode)
    return knn_query(reference, queries, k, metric, mode)


# ---------------------------------------------------------------------------
# kNN-error transforms
# ---------------------------------------------------------------------------


def est_1nn(
    train: Dataset, eval_: Dataset, metric: Metric = "squared_euclidean",
    cache: GeometryCache | None = None,
) -> EstimateInterval:
    """1NN eval error as the upper bound, its Cover-Hart inversion as the lower."""
    return est_knn(train, eval_, 1, metric, cache)


def est_knn(
    train: Dataset, eval_: Dataset, k: int, metric: Metric = "squared_euclidean",
    cache: GeometryCache | None = None,
) -> EstimateInterval:
    """kNN eval error as the upper bound, inverted for the lower bound."""
    nl = _neighbors_for(cache, train.features, eval_.features, k, metric, "standard")
    err = knn_error(train, eval_, k, metric, "standard", neighbors=nl)
    return make_interval(knn_lower(err, train.num_classes, k), err)


def est_knn_loo(
    eval_: Dataset, k: int, metric: Metric = "squared_euclidean",
    cache: GeometryCache | None = None,
) -> EstimateInterval:
    """Leave-one-out kNN error on the eval set; no train split required."""
    if not 1 <= k <= eval_.n - 1:
        raise EstimatorError(f"knn_loo needs 1 <= k <= n-1 = {eval_.n - 1}, got {k}")
    nl = _neighbors_for(cache, eval_.features, eval_.features, k, metric, "loo")
    err = knn_error(eval_, eval_, k, metric, "loo", neighbors=nl)
    return make_interval(knn_lower(err, eval_.num_classes, k), err)


# ---------------------------------------------------------------------------
# Posterior-counting estimators
# ---------------------------------------------------------------------------


def _plugin_error_from_counts(counts: np.ndarray, k: int) -> float:
    # mean of (1 - max_y k_y / k) over queries
    return float(np.mean(1.0 - counts.max(axis=1) / k))


def est_de_knn(
    eval_: Dataset, k: int, metric: Metric = "squared_euclidean",
    cache: GeometryCache | None = None,
) -> EstimateInterval:
    """Plug-in error from neighbor label fractions ``k_y / k``.

    The optimistic lower bound keeps each query inside its own neighbor set
    (resubstitution); the upper bound excludes it (leave-one-out).
    """
    if not 2 <= k <= eval_.n - 1:
        raise EstimatorError(f"de_knn needs 2 <= k <= n-1 = {eval_.n - 1}, got {k}")
    feats = eval_.features
    resub = _neighbors_for(cache, feats, feats, k, metric, "standard")
    loo = _neighbors_for(cache, feats, feats, k, metric, "loo")
    lower = _plugin_error_from_counts(
        neighbor_label_counts(resub, eval_.labels, eval_.num_classes), k
    )
    upper = _plugin_error_from_counts(
        neighbor_label_counts(loo, eval_.labels, eval_.num_classes), k
    )
    # Resubstitution is optimistic on any non-degenerate data; collapse the
    # rare adversarial crossing instead of reporting an inverted interval.
    return make_interval(min(lower, upper), upper)


def est_1nn_knn(
    eval_: Dataset, k: int, metric: Metric = "squared_euclidean",
    cache: GeometryCache | None = None,
) -> EstimateInterval:
    """Unbiased 1NN-error estimate from k-neighbor counts (Devijver statistic).

    ``e1 = mean( sum_y k_y (k - k_y) / (k (k-1)) )`` with resubstitution
    neighbors; the asymptotic 1NN error dominates the BER, so ``e1`` is the
    upper bound and its Cover-Hart inversion the lower.
    """
    if not 2 <= k <= eval_.n:
        raise EstimatorError(f"one_nn_knn needs 2 <= k <= n = {eval_.n}, got {k}")
    feats = eval_.features
    nl = _neighbors_for(cache, feats, feats, k, metric, "standard")
    counts = neighbor_label_counts(nl, eval_.labels, eval_.num_classes)
    stat = np.sum(counts * (k - counts), axis=1) / (k * (k - 1.0))
    e1 = float(np.mean(stat))
    e1 = min(e1, 1.0)
    return make_interval(cover_hart_lower(e1, eval_.num_classes), e1)


# ---------------------------------------------------------------------------
# Kernel density classification
# ---------------------------------------------------------------------------


def kde_posteriors(eval_: Dataset, bandwidth: float) -> np.ndarray:
    """Per-sample class posteriors of the Gaussian-KDE classifier.

    Class priors are the class fractions; class likelihoods are isotropic
    Gaussian KDEs with per-coordinate std ``bandwidth`` over that class's
    samples (each point contributes to its own class sum).  Kernel sums run
    in log space, so bandwidths far below the data scale do not underflow
    even at large dimension.  Rows sum to 1.
    """
    if not bandwidth > 0:
        raise EstimatorError(f"kde needs bandwidth > 0, got {bandwidth}")
    c = eval_.num_classes
    class_counts = np.bincount(eval_.labels, minlength=c)
    if np.any(class_counts == 0):
        missing = int(np.argwhere(class_counts == 0)[0, 0])
        raise EstimatorError(f"kde needs every class populated; class {missing} has no samples")

    feats = eval_.features
    n = eval_.n
    log_scores = np.empty((n, c))
    inv_two_b2 = 1.0 / (2.0 * bandwidth * bandwidth)
    # The shared (2 pi B^2)^(-d/2) kernel constant cancels in the posterior.
    for y in range(c):
        members = feats[eval_.labels == y]
        block = max(1, 2_000_000 // max(1, members.shape[0]))
        log_density = np.empty(n)
        for start in range(0, n, block):
            d2 = squared_distances(feats[start : start + block], members)
            z = -d2 * inv_two_b2
            zmax = z.max(axis=1)
            log_density[start : start + block] = zmax + np.log(
                np.exp(z - zmax[:, None]).sum(axis=1)
            )
        log_scores[:, y] = log_density + math.log(class_counts[y] / n) - math.log(class_counts[y])

    log_scores -= log_scores.max(axis=1, keepdims=True)
    post = np.exp(log_scores)
    post /= post.sum(axis=1, keepdims=True)
    return post


def est_kde(eval_: Dataset, bandwidth: float, cache: GeometryCache | None = None) -> EstimateInterval:
    """Plug-in error of the KDE posterior: ``mean(1 - max_y posterior)``.

    A single-value estimate, reported as both bounds.
    """
    post = kde_posteriors(eval_, bandwidth)
    err = float(np.mean(1.0 - post.max(axis=1)))
    return make_interval(err, err)


# ---------------------------------------------------------------------------
# Divergence estimator
# ---------------------------------------------------------------------------


def ghp_bounds(g_stat: float, c: int) -> tuple[float, float]:
    """Lower/upper BER bounds from the dichotomous-edge statistic.

    ``upper = min(2 g, 1 - 1/c)`` and
    ``lower = ((c-1)/c) (1 - sqrt(max(0, 1 - (2c/(c-1)) g)))``.
    """
    ceiling = 1.0 - 1.0 / c
    upper = min(2.0 * g_stat, ceiling)
    radicand = max(0.0, 1.0 - (2.0 * c / (c - 1.0)) * g_stat)
    lower = ceiling * (1.0 - math.sqrt(radicand))
    return lower, upper


def est_ghp(eval_: Dataset, cache: GeometryCache | None = None) -> EstimateInterval:
    """Divergence bounds from dichotomous edges of the Euclidean MST.

    Counts MST edges joining differently-labelled samples; the fraction over
    ``2n`` estimates the pairwise separability from which both bounds follow.
    Euclidean metric, no hyper-parameters.
    """
    if eval_.n < 2:
        raise EstimatorError(f"ghp needs at least 2 samples, got {eval_.n}")
    edges = cache.mst(eval_.features) if cache is not None else build_mst(eval_.features)
    counts = dichotomous_counts(edges, eval_.labels, eval_.num_classes)
    g_stat = dichotomous_fraction_stat(counts, eval_.n)
    lower, upper = ghp_bounds(g_stat, eval_.num_classes)
    return make_interval(lower, upper)


# ---------------------------------------------------------------------------
# Convergence extrapolation
# ---------------------------------------------------------------------------


def default_schedule(n_train: int) -> tuple[int, ...]:
    sched = sorted({max(1, n_train // f) for f in (16, 8, 4, 2, 1)})
    return tuple(sched)


def fit_error_asymptote(sizes: np.ndarray, errors: np.ndarray, dim: int) -> tuple[float, float]:
    """Least-squares fit of ``e_m ~ a + b * m**(-2/dim)``; returns ``(a, b)``.

    The leading finite-sample expansion term of the kNN error decays as
    ``m**(-2/dim)``; the intercept ``a`` is the extrapolated asymptote.
    """
    x = np.asarray(sizes, dtype=np.float64) ** (-2.0 / dim)
    if np.ptp(x) == 0.0:
        raise EstimatorError("degenerate extrapolation fit: all size terms coincide")
    design = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(design, np.asarray(errors, dtype=np.float64), rcond=None)
    return float(coef[0]), float(coef[1])


def est_knn_extrapolate(
    train: Dataset,
    eval_: Dataset,
    k: int,
    metric: Metric = "squared_euclidean",
    schedule: tuple[int, ...] | None = None,
    expansion_dim: int | None = None,
    seed: int = 0,
    cache: GeometryCache | None = None,
) -> EstimateInterval:
    """Extrapolate kNN eval errors over nested training sizes to the limit.

    Errors are measured for each size in ``schedule`` (default geometric,
    n/16 up to n) on nested subsamples, fitted against ``m**(-2/dim)``, and
    the intercept (clamped to ``[0, 1 - 1/c]``) is read as the asymptotic
    kNN error: upper bound directly, lower bound through the usual
    inversion.  High variance is expected; the fit extrapolates.
    """
    sched = schedule if schedule is not None else default_schedule(train.n)
    sched = tuple(int(m) for m in sched)
    if len(sched) < 3 or any(b <= a for a, b in zip(sched, sched[1:])):
        raise EstimatorError(f"schedule must be >= 3 strictly increasing sizes, got {sched}")
    if sched[-1] > train.n:
        raise EstimatorError(f"schedule max {sched[-1]} exceeds train size {train.n}")
    if k > sched[0]:
        raise EstimatorError(f"k={k} exceeds smallest schedule size {sched[0]}")
    dim = expansion_dim if expansion_dim is not None else train.d
    sub_seed = derive_seed(seed, "extrapolate-subsample")
    errors = []
    for m in sched:
        part = train if m == train.n else subsample(train, m, sub_seed)
        errors.append(knn_error(part, eval_, k, metric, "standard"))
    a, _ = fit_error_asymptote(np.asarray(sched), np.asarray(errors), dim)
    ceiling = 1.0 - 1.0 / train.num_classes
    a = min(max(a, 0.0), ceiling)
    return make_interval(knn_lower(a, train.num_classes, k), a)


# ---------------------------------------------------------------------------
# Scaled classifier
# ---------------------------------------------------------------------------


def scaled_accuracy_lower(err: float, scaling: float) -> float:
    """Lower bound from dividing a classifier's accuracy by ``scaling`` < 1."""
    return max(0.0, 1.0 - (1.0 - err) / scaling)


def _softmax_regression_error(train: Dataset, eval_: Dataset) -> float:
    # Fixed recipe so results are reproducible: standardize per coordinate
    # with train statistics, zero init, full-batch GD, lr 0.1, 500 steps,
    # L2 penalty 1e-4 on the weights.
    x = train.features.astype(np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    xs = (x - mean) / std
    n, d = xs.shape
    c = train.num_classes
    onehot = np.zeros((n, c))
    onehot[np.arange(n), train.labels] = 1.0

    weights = np.zeros((d, c))
    bias = np.zeros(c)
    lr = 0.1
    penalty = 1e-4
    loss = math.inf
    for _ in range(500):
        logits = xs @ weights + bias
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        probs = expl / expl.sum(axis=1, keepdims=True)
        grad = probs - onehot
        weights -= lr * (xs.T @ grad / n + penalty * weights)
        bias -= lr * grad.mean(axis=0)
    log_probs = logits - np.log(expl.sum(axis=1, keepdims=True))
    loss = float(-np.mean(log_probs[np.arange(n), train.labels]))
    if not math.isfinite(loss):
        raise EstimatorError(f"softmax training diverged, final loss {loss}")

    xe = (eval_.features.astype(np.float64) - mean) / std
    predicted = np.argmax(xe @ weights + bias, axis=1)
    return float(np.mean(predicted != eval_.labels))


def est_scaled_classifier(
    train: Dataset, eval_: Dataset, scaling: float, cache: GeometryCache | None = None
) -> EstimateInterval:
    """Linear-softmax eval error; accuracy optimistically divided by ``scaling``.

    The classifier error is the upper bound.  Dividing its accuracy by a
    constant in (0, 1) posits how far below the observed accuracy the best
    achievable accuracy could still be, giving
    ``lower = max(0, 1 - (1 - err) / scaling)``.
    """
    if not 0.0 < scaling < 1.0:
        raise EstimatorError(f"scaling must be in (0, 1), got {scaling}")
    err = _softmax_regression_error(train, eval_)
    return make_interval(scaled_accuracy_lower(err, scaling), err)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def estimate(
    train: Dataset,
    eval_: Dataset,
    config: EstimatorConfig,
    seed: int = 0,
    cache: GeometryCache | None = None,
) -> EstimateInterval:
    """Run one estimator variant on the given splits.

    ``seed`` only affects methods with internal sampling (knn_extrapolate).
    """
    if train.num_classes != eval_.num_classes:
        raise ValueError("class counts differ between splits")
    m = config.method
    if m == "one_nn":
        return est_1nn(train, eval_, config.metric, cache)
    if m == "knn":
        return est_knn(train, eval_, config.k, config.metric, cache)
    if m == "knn_loo":
        return est_knn_loo(eval_, config.k, config.metric, cache)
    if m == "de_knn":
        return est_de_knn(eval_, config.k, config.metric, cache)
    if m == "one_nn_knn":
        return est_1nn_knn(eval_, config.k, config.metric, cache)
    if m == "kde":
        return est_kde(eval_, config.bandwidth, cache)
    if m == "ghp":
        return est_ghp(eval_, cache)
    if m == "knn_extrapolate":
        return est_knn_extrapolate(
            train, eval_, config.k, config.metric, config.schedule,
            config.expansion_dim, seed, cache,
        )
    if m == "scaled_classifier":
        return est_scaled_classifier(train, eval_, config.scaling, cache)
    raise ValueError(f"unknown estimator method {m!r}")
