"""Empirical conditional value at risk (CVaR).

All routines operate on finite samples with uniform weights. For a sample
``v`` and level ``delta`` in ``[0, 1)``, the CVaR is the variational minimum

    min_t  t + mean((v - t)_+) / (1 - delta)

which, for an empirical distribution, equals the average of the worst
``(1 - delta) * K`` realizations with fractional inclusion of the threshold
sample. ``delta = 0`` gives the mean and ``delta -> 1`` the maximum.
"""

from __future__ import annotations

import numpy as np

from .errors import BadDelta


def _as_sample(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empirical sample must be nonempty")
    if not np.all(np.isfinite(v)):
        raise ValueError("empirical sample must be finite")
    return v


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0.0 <= delta < 1.0:
        raise BadDelta(f"risk level must lie in [0, 1), got {delta}")
    return delta


def cvar(values, delta: float) -> float:
    """Empirical CVaR at level ``delta``, computed in closed form by sorting.

    The tail mass ``m = (1 - delta) * K`` is spread over the ``floor(m)``
    largest samples with fractional weight ``m - floor(m)`` on the next one.
    """
    v = _as_sample(values)
    delta = _check_delta(delta)
    k = v.size
    m = (1.0 - delta) * k
    v_desc = np.sort(v)[::-1]
    full = int(np.floor(m))
    frac = m - full
    if full >= k:
        # delta == 0 up to rounding: plain mean
        return float(np.mean(v_desc))
    total = float(np.sum(v_desc[:full])) + frac * float(v_desc[full])
    return total / m


def cvar_argmin_t(values, delta: float) -> float:
    """Smallest minimizer of the CVaR variational objective over the sample.

    The objective is piecewise linear and convex with breakpoints at the
    sample values, so the minimum is attained at a sample point; ties are
    broken toward the smallest one. This is the (left) empirical VaR level.
    """
    v = _as_sample(values)
    delta = _check_delta(delta)
    k = v.size
    m = (1.0 - delta) * k
    v_asc = np.sort(v)
    # count of samples strictly above v_asc[j] is k - searchsorted(side right)
    above = k - np.searchsorted(v_asc, v_asc, side="right")
    candidates = v_asc[above <= m]
    return float(candidates[0])


def violation_fraction(values, threshold: float) -> float:
    """Fraction of realizations strictly exceeding ``threshold``."""
    v = _as_sample(values)
    return float(np.count_nonzero(v > float(threshold))) / v.size
