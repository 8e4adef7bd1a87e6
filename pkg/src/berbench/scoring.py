"""Area scores: how far an estimator's noise-level curves escape the envelope.

For a noise grid spanning [0, 1], an estimator traces piecewise-linear lower
and upper curves.  Four nonnegative areas measure the escapes: the lower
curve falling below the analytic lower envelope or rising above the upper
envelope, and the same two escapes for the upper curve.  Areas are scaled by
``2C/(C-1)`` so a uniform-random classifier scores exactly 1 on both totals.

Integrals are trapezoidal after inserting the exact crossing points of the
difference curves, which makes them exact for piecewise-linear inputs.
Scores are computed per seed slice and then averaged, which also yields the
reported dispersion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EnvelopeCurve, EstimateInterval


@dataclass(frozen=True)
class TrialResult:
    """One estimator run: noise level, repeat index, interval, wall time."""

    rho: float
    seed: int
    estimate: EstimateInterval
    wall_time_ms: int = 0


@dataclass(frozen=True)
class CurveEstimate:
    """Per-noise-level curve statistics across seeds.

    ``lower_by_seed`` / ``upper_by_seed`` hold one row per seed that covers
    the full grid; per-rho means and sample stds are over every trial at
    that rho.
    """

    rho: np.ndarray  # (R,), sorted ascending
    lower_mean: np.ndarray
    lower_std: np.ndarray
    upper_mean: np.ndarray
    upper_std: np.ndarray
    counts: np.ndarray  # (R,) trials per rho
    seeds: tuple[int, ...]  # seeds with full coverage, sorted
    lower_by_seed: np.ndarray  # (S, R)
    upper_by_seed: np.ndarray  # (S, R)


@dataclass(frozen=True)
class ScoreReport:
    """The four escape areas with totals and across-seed dispersion."""

    l: float
    l_left: float
    l_right: float
    u: float
    u_left: float
    u_right: float
    l_std: float = 0.0
    l_left_std: float = 0.0
    l_right_std: float = 0.0
    u_std: float = 0.0
    u_left_std: float = 0.0
    u_right_std: float = 0.0
    num_seeds: int = 1


def _sample_std(values: np.ndarray) -> np.ndarray:
    # sample std (ddof=1), defined as 0 for a single observation
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] < 2:
        return np.zeros(values.shape[1:] if values.ndim > 1 else ())
    return values.std(axis=0, ddof=1)


def aggregate_trials(trials: list[TrialResult]) -> CurveEstimate:
    """Collect trials into per-rho curve statistics.

    Output is independent of input order.  Per-seed curve rows are built
    from seeds present at every rho; per-rho means and stds use all trials.
    """
    if not trials:
        raise ValueError("no trials to aggregate")
    ordered = sorted(trials, key=lambda t: (t.rho, t.seed))
    rhos = sorted({t.rho for t in ordered})
    by_rho: dict[float, list[TrialResult]] = {r: [] for r in rhos}
    for t in ordered:
        by_rho[t.rho].append(t)

    lower_mean, lower_std, upper_mean, upper_std, counts = [], [], [], [], []
    for r in rhos:
        lows = np.array([t.estimate.lower for t in by_rho[r]])
        ups = np.array([t.estimate.upper for t in by_rho[r]])
        lower_mean.append(lows.mean())
        lower_std.append(float(_sample_std(lows)))
        upper_mean.append(ups.mean())
        upper_std.append(float(_sample_std(ups)))
        counts.append(len(lows))

    complete = sorted(set.intersection(*({t.seed for t in by_rho[r]} for r in rhos)))
    lower_by_seed = np.empty((len(complete), len(rhos)))
    upper_by_seed = np.empty((len(complete), len(rhos)))
    for si, s in enumerate(complete):
        for ri, r in enumerate(rhos):
            # first trial with this seed at this rho (stable under sorting)
            t = next(t for t in by_rho[r] if t.seed == s)
            lower_by_seed[si, ri] = t.estimate.lower
            upper_by_seed[si, ri] = t.estimate.upper

    return CurveEstimate(
        rho=np.asarray(rhos, dtype=np.float64),
        lower_mean=np.asarray(lower_mean),
        lower_std=np.asarray(lower_std),
        upper_mean=np.asarray(upper_mean),
        upper_std=np.asarray(upper_std),
        counts=np.asarray(counts, dtype=np.int64),
        seeds=tuple(complete),
        lower_by_seed=lower_by_seed,
        upper_by_seed=upper_by_seed,
    )


def positive_part_area(x: np.ndarray, y: np.ndarray) -> float:
    """Exact integral of ``max(linear interpolant of y, 0)`` over the grid x.

    Segments that change sign are split at the crossing point, so the result
    is exact (not just trapezoid-approximate) for piecewise-linear curves.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.shape[0] < 2:
        raise ValueError(f"need matching 1-d grids of length >= 2, got {x.shape} and {y.shape}")
    total = 0.0
    for i in range(x.shape[0] - 1):
        width = x[i + 1] - x[i]
        y0, y1 = y[i], y[i + 1]
        if y0 >= 0.0 and y1 >= 0.0:
            total += 0.5 * (y0 + y1) * width
        elif y0 > 0.0 > y1:
            frac = y0 / (y0 - y1)
            total += 0.5 * y0 * frac * width
        elif y1 > 0.0 > y0:
            frac = y1 / (y1 - y0)
            total += 0.5 * y1 * frac * width
    return float(total)


def _component_scores(
    rho: np.ndarray, lower: np.ndarray, upper: np.ndarray, env: EnvelopeCurve
) -> tuple[float, float, float, float]:
    scale = 2.0 * env.c / (env.c - 1.0)
    env_lower = env.lower(rho)
    env_upper = env.upper(rho)
    l_left = scale * positive_part_area(rho, env_lower - lower)
    l_right = scale * positive_part_area(rho, lower - env_upper)
    u_left = scale * positive_part_area(rho, env_lower - upper)
    u_right = scale * positive_part_area(rho, upper - env_upper)
    return l_left, l_right, u_left, u_right


def area_scores(curve: CurveEstimate, c: int, sota: float) -> ScoreReport:
    """Score one estimator's curves against the envelope for (c, sota).

    The grid must span [0, 1].  Components are computed for each complete
    seed slice, then averaged; dispersion is the across-seed sample std.
    """
    env = EnvelopeCurve(c, sota)
    rho = curve.rho
    if rho[0] != 0.0 or rho[-1] != 1.0:
        raise ValueError(f"noise grid must span [0, 1], got [{rho[0]}, {rho[-1]}]")
    if curve.lower_by_seed.shape[0] == 0:
        raise ValueError("no seed covers the full noise grid")

    per_seed = np.array(
        [
            _component_scores(rho, curve.lower_by_seed[s], curve.upper_by_seed[s], env)
            for s in range(curve.lower_by_seed.shape[0])
        ]
    )  # (S, 4): l_left, l_right, u_left, u_right
    l_parts = per_seed[:, 0] + per_seed[:, 1]
    u_parts = per_seed[:, 2] + per_seed[:, 3]
    means = per_seed.mean(axis=0)
    stds = _sample_std(per_seed)
    return ScoreReport(
        l=float(l_parts.mean()),
        l_left=float(means[0]),
        l_right=float(means[1]),
        u=float(u_parts.mean()),
        u_left=float(means[2]),
        u_right=float(means[3]),
        l_std=float(_sample_std(l_parts)),
        l_left_std=float(stds[0]),
        l_right_std=float(stds[1]),
        u_std=float(_sample_std(u_parts)),
        u_left_std=float(stds[2]),
        u_right_std=float(stds[3]),
        num_seeds=per_seed.shape[0],
    )


def score_experiment(
    grouped: dict[tuple[str, str], list[TrialResult]], c: int, sota: float
) -> list[tuple[tuple[str, str], ScoreReport]]:
    """Score every (method, variant) group; order follows the mapping order."""
    return [(key, area_scores(aggregate_trials(trials), c, sota)) for key, trials in grouped.items()]


def best_per_method(
    scored: list[tuple[tuple[str, str], ScoreReport]]
) -> dict[str, dict[str, tuple[str, float]]]:
    """Pick the variant minimizing L and, independently, the one minimizing U.

    Exact ties resolve by variant string, so the reduction does not depend
    on group ordering.
    """
    best: dict[str, dict[str, tuple[str, float]]] = {}
    for (method, variant), report in scored:
        entry = best.setdefault(method, {})
        for score_name, value in (("L", report.l), ("U", report.u)):
            incumbent = entry.get(score_name)
            if incumbent is None or (value, variant) < (incumbent[1], incumbent[0]):
                entry[score_name] = (variant, value)
    return best
