"""Digamma and trigamma functions.

Both are computed by shifting the argument upward with the recurrences
``psi(x) = psi(x+1) - 1/x`` and ``psi'(x) = psi'(x+1) + 1/x**2`` until it is
at least 6, then applying the asymptotic (Bernoulli-number) series.  The
implementation is vectorized over numpy arrays and accepts any positive
argument; values at or below zero return nan.
"""

from __future__ import annotations

import numpy as np

_SHIFT_TARGET = 6.0
# B_{2n}/(2n) for the digamma series, n = 1..7
_DIGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
# B_{2n} for the trigamma series, n = 1..6
_TRIGAMMA_COEF = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
)


def digamma(x):
    """Elementwise digamma of a positive array or scalar."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    out = np.full_like(x, np.nan)
    ok = x > 0.0
    acc = np.zeros_like(x)
    z = np.where(ok, x, 1.0)
    for _ in range(int(_SHIFT_TARGET)):
        low = z < _SHIFT_TARGET
        acc[low] -= 1.0 / z[low]
        z[low] += 1.0
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    p = inv2
    for c in _DIGAMMA_COEF:
        series -= c * p
        p = p * inv2
    val = acc + np.log(z) - 0.5 * inv + series
    out[ok] = val[ok]
    return out[0] if scalar else out


def trigamma(x):
    """Elementwise trigamma of a positive array or scalar."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    out = np.full_like(x, np.nan)
    ok = x > 0.0
    acc = np.zeros_like(x)
    z = np.where(ok, x, 1.0)
    for _ in range(int(_SHIFT_TARGET)):
        low = z < _SHIFT_TARGET
        acc[low] += 1.0 / (z[low] * z[low])
        z[low] += 1.0
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    p = inv * inv2
    for c in _TRIGAMMA_COEF:
        series += c * p
        p = p * inv2
    val = acc + inv + 0.5 * inv2 + series
    out[ok] = val[ok]
    return out[0] if scalar else out
