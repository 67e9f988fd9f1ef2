"""Log-space binomial/trinomial masses and Hoeffding windows.

Binomial log-masses use Loader's saddle-point decomposition (Stirling
remainders plus the deviance term ``bd0``), which keeps relative accuracy
near machine precision for n in the millions where a plain difference of
log-gamma values loses about nine digits.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_S0, _S1, _S2, _S3, _S4 = 1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188

# log(k!) - log(sqrt(2 pi k) (k/e)^k) for small k; entry 0 is unused.
_STIRLERR_TABLE = np.array(
    [0.0] + [math.lgamma(k + 1) - (k + 0.5) * math.log(k) + k - _LOG_SQRT_2PI
             for k in range(1, 16)])


def stirlerr(n):
    """Remainder of Stirling's formula for log(n!), n a positive integer array."""
    n = np.asarray(n, dtype=np.float64)
    out = np.empty_like(n)
    small = n <= 15
    out[small] = _STIRLERR_TABLE[n[small].astype(np.int64)]
    big = n[~small]
    nn = big * big
    res = np.where(
        big > 500, (_S0 - _S1 / nn) / big,
        np.where(big > 80, (_S0 - (_S1 - _S2 / nn) / nn) / big,
                 np.where(big > 35, (_S0 - (_S1 - (_S2 - _S3 / nn) / nn) / nn) / big,
                          (_S0 - (_S1 - (_S2 - (_S3 - _S4 / nn) / nn) / nn) / nn) / big)))
    out[~small] = res
    return out


def bd0(x, m):
    """x*log(x/m) + m - x, accurate when x is close to m."""
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    x, m = np.broadcast_arrays(x, m)
    out = np.empty(x.shape)
    near = np.abs(x - m) < 0.1 * (x + m)
    xs, ms = x[~near], m[~near]
    with np.errstate(divide="ignore", invalid="ignore"):
        out[~near] = xs * np.log(xs / ms) + ms - xs
    xn, mn = x[near], m[near]
    v = (xn - mn) / (xn + mn)
    s = (xn - mn) * v
    ej = 2 * xn * v
    v2 = v * v
    for j in range(1, 200):
        ej = ej * v2
        s_next = s + ej / (2 * j + 1)
        if np.array_equal(s_next, s):
            break
        s = s_next
    out[near] = s
    return out


def binom_logpmf(k, n, p: float, q: float | None = None):
    """log P(Bin(n, p) = k); ``q`` may pass an accurate ``1 - p``.

    Arguments broadcast; values of k outside [0, n] give -inf.
    """
    if q is None:
        q = 1.0 - p
    k = np.asarray(k, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    k, n = np.broadcast_arrays(k, n)
    out = np.full(k.shape, -np.inf)
    inside = (k >= 0) & (k <= n)
    if p <= 0 or q <= 0:
        hit = (k == 0) if p <= 0 else (k == n)
        out[inside & hit] = 0.0
        return out if out.ndim else float(out)
    log_p, log_q = math.log(p), math.log(q)
    lower = inside & (k == 0)
    upper = inside & (k == n) & (n > 0)
    out[lower] = n[lower] * log_q
    out[upper] = n[upper] * log_p
    mid = inside & (k > 0) & (k < n)
    km, nm = k[mid], n[mid]
    lc = (stirlerr(nm) - stirlerr(km) - stirlerr(nm - km)
          - bd0(km, nm * p) - bd0(nm - km, nm * q))
    lf = 2 * _LOG_SQRT_2PI + np.log(km) + np.log1p(-km / nm)
    out[mid] = lc - 0.5 * lf
    return out if out.ndim else float(out)


def log_comb(n, k):
    """log C(n, k) via log-gamma; -inf outside 0 <= k <= n."""
    n = np.asarray(n, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        out = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return np.where((k >= 0) & (k <= n), out, -np.inf)


def trinom_logpmf(a, b, n, p1: float, p2: float):
    """log P of counts (a, b, n - a - b) with cell probabilities (p1, p2, 1 - p1 - p2).

    Factored as Bin(n, p1) for the first cell times Bin(n - a, p2 / (1 - p1))
    for the second.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    first = binom_logpmf(a, n, p1)
    rest = 1.0 - p1
    if rest <= 0:
        second = np.where(b == 0, 0.0, -np.inf)
    else:
        ratio = min(1.0, p2 / rest)
        second = binom_logpmf(b, n - a, ratio, max(0.0, (rest - p2) / rest))
    return np.asarray(first) + np.asarray(second)


def hoeffding_halfwidth(trials: int, tail: float) -> float:
    """Half-width c with 2*exp(-2*trials*c^2) <= tail."""
    if tail <= 0:
        return math.inf
    return math.sqrt(math.log(2.0 / tail) / (2.0 * trials))


def hoeffding_window(trials: int, p: float, tail: float) -> tuple[int, int]:
    """Integer range of Bin(trials, p) outside of which at most ``tail`` mass lies.

    Bounds are rounded outward and clamped to ``[0, trials]``; ``tail <= 0``
    or ``trials == 0`` gives the full support.
    """
    if trials <= 0:
        return 0, 0
    c = hoeffding_halfwidth(trials, tail)
    if not math.isfinite(c):
        return 0, trials
    lo = max(0, math.floor((p - c) * trials))
    hi = min(trials, math.ceil((p + c) * trials))
    return lo, hi


def hoeffding_windows(trials: np.ndarray, p: float, tail: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`hoeffding_window` over an array of trial counts."""
    trials = np.asarray(trials, dtype=np.int64)
    if tail <= 0:
        return np.zeros_like(trials), trials.copy()
    safe = np.maximum(trials, 1)
    c = np.sqrt(math.log(2.0 / tail) / (2.0 * safe))
    lo = np.maximum(0, np.floor((p - c) * trials)).astype(np.int64)
    hi = np.minimum(trials, np.ceil((p + c) * trials)).astype(np.int64)
    return lo, hi
