"""Closed-form math for Bayes-error evolution under uniform label noise.

Resampling each label with probability ``rho`` by a uniform draw over all
``c`` classes moves the Bayes error rate (BER) along a straight line from
its clean value to the random-classifier error ``1 - 1/c``.  This module
implements that line, the analytic envelope that brackets it when only an
upper bound (the best published error) is known, and the classical
inversions that turn a nearest-neighbor error into a BER lower bound.

Everything here is a pure function of its scalar inputs; no samples are
ever touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


def _check_classes(c: int) -> int:
    if not isinstance(c, (int, np.integer)) or isinstance(c, bool):
        raise ValueError(f"class count must be an integer, got {c!r}")
    if c < 2:
        raise ValueError(f"class count must be >= 2, got {c}")
    return int(c)


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"noise level must be in [0, 1], got {rho}")
    return rho


def _check_error_rate(value: float, name: str = "error rate") -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0 or math.isnan(value):
        raise ValueError(f"{name} must be in [0, 1], got {value}")
    return value


class EstimateInterval(NamedTuple):
    """An estimator's (lower, upper) BER bounds for a single trial.

    Single-value estimators set ``lower == upper``.
    """

    lower: float
    upper: float


def make_interval(lower: float, upper: float) -> EstimateInterval:
    """Build an interval, enforcing 0 <= lower <= upper <= 1.

    Float dust up to 1e-9 is clipped; larger violations raise.
    """
    lower = float(lower)
    upper = float(upper)
    if math.isnan(lower) or math.isnan(upper):
        raise ValueError("interval bounds must not be NaN")
    if lower > upper + 1e-9 or lower < -1e-9 or upper > 1.0 + 1e-9:
        raise ValueError(f"invalid interval ({lower}, {upper})")
    lower = min(max(lower, 0.0), 1.0)
    upper = min(max(upper, 0.0), 1.0)
    return EstimateInterval(min(lower, upper), upper)


def noisy_ber(r_star: float, rho: float, c: int) -> float:
    """BER after resampling labels with probability ``rho`` uniformly over ``c`` classes.

    Returns ``r_star + rho * (1 - 1/c - r_star)``: affine in ``rho``, equal to
    ``r_star`` at ``rho = 0`` and to the random-classifier error ``1 - 1/c``
    at ``rho = 1``.

    Raises if ``r_star`` exceeds ``1 - 1/c``: no distribution attains a BER
    above the random-classifier error.
    """
    c = _check_classes(c)
    rho = _check_rho(rho)
    r_star = _check_error_rate(r_star, "BER")
    ceiling = 1.0 - 1.0 / c
    if r_star > ceiling:
        raise ValueError(f"BER {r_star} exceeds random-classifier error {ceiling} for c={c}")
    return r_star + rho * (ceiling - r_star)


@dataclass(frozen=True)
class EnvelopeCurve:
    """Analytic bracket for the noisy BER when only an upper bound is known.

    ``sota`` is the best known error rate on the dataset, a valid upper bound
    on the clean BER.  With 0 as the trivial lower bound, the noisy BER at
    noise level ``rho`` lies in ``[lower(rho), upper(rho)]`` where::

        lower(rho) = rho * (1 - 1/c)
        upper(rho) = sota + rho * (1 - 1/c - sota)

    Both curves are linear in ``rho`` and meet at ``1 - 1/c`` when ``rho = 1``.
    """

    c: int
    sota: float

    def __post_init__(self) -> None:
        c = _check_classes(self.c)
        sota = _check_error_rate(self.sota, "sota error")
        if sota > 1.0 - 1.0 / c:
            raise ValueError(
                f"sota error {sota} exceeds random-classifier error {1.0 - 1.0 / c} for c={c}"
            )
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "sota", sota)

    def lower(self, rho):
        """Valid lower bound at noise level ``rho`` (scalar or array)."""
        return np.asarray(rho, dtype=np.float64) * (1.0 - 1.0 / self.c)

    def upper(self, rho):
        """Valid upper bound at noise level ``rho`` (scalar or array)."""
        rho = np.asarray(rho, dtype=np.float64)
        return self.sota + rho * (1.0 - 1.0 / self.c - self.sota)


def envelope(rho: float, env: EnvelopeCurve) -> tuple[float, float]:
    """Evaluate the envelope at one noise level, returning ``(lower, upper)``."""
    rho = _check_rho(rho)
    return float(env.lower(rho)), float(env.upper(rho))


def cover_hart_lower(err: float, c: int) -> float:
    """Invert the asymptotic 1NN error bound into a BER lower bound.

    Returns ``err / (1 + sqrt(max(0, 1 - c*err/(c-1))))``.  The radicand is
    clamped at zero (finite-sample errors can exceed ``(c-1)/c`` under heavy
    noise, where the expression is otherwise undefined) and the output is
    clamped to ``[0, 1 - 1/c]`` so the transform stays total.
    """
    c = _check_classes(c)
    err = _check_error_rate(err)
    radicand = max(0.0, 1.0 - c * err / (c - 1.0))
    lower = err / (1.0 + math.sqrt(radicand))
    return min(lower, 1.0 - 1.0 / c)


def knn_lower(err: float, c: int, k: int) -> float:
    """BER lower bound from a kNN error, using the sharpest known inversion.

    ``k == 1`` uses the Cover-Hart inversion for any ``c``.  For ``c == 2``
    the divisor improves to ``1 + sqrt(2/k)`` at ``k == 2`` and
    ``1 + sqrt(1/k)`` for ``k > 2``.  For ``c > 2`` with ``k > 1`` no sharper
    bound is known and the Cover-Hart form is reused.  Output clamped to
    ``[0, 1 - 1/c]``.
    """
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise ValueError(f"k must be an integer, got {k!r}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    c = _check_classes(c)
    err = _check_error_rate(err)
    if k == 1 or c > 2:
        return cover_hart_lower(err, c)
    if k == 2:
        lower = err / (1.0 + math.sqrt(2.0 / k))
    else:
        lower = err / (1.0 + math.sqrt(1.0 / k))
    return min(lower, 1.0 - 1.0 / c)
