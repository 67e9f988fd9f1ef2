"""Privacy loss distribution of the clones dominating pair for shuffled eps0-LDP.

With ``C ~ Bin(n-1, exp(-eps0))`` and ``A | C ~ Bin(C, 1/2)`` the pair is the
mixture

    P = q * P1 + (1 - q) * P0,   Q = (1 - q) * P1 + q * P0,
    P1 = (A + 1, C - A),         P0 = (A, C - A + 1),

with ``q = e^eps0 / (e^eps0 + 1)``. Every support point ``(a, b)`` has
``a + b = C + 1``, so the builders enumerate points row by row in ``C``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from .binomial import binom_logpmf, hoeffding_window, hoeffding_windows
from .pld import DiscretePLD, Direction, ResourceLimitError

DEFAULT_MAX_ATOMS = 20_000_000
_ROW_CHUNK = 512


@dataclass(frozen=True)
class ClonesParams:
    n: int
    eps0: float
    tau: float = 0.0
    subsample_ratio: float = 1.0
    direction: Direction = Direction.NUM_OVER_DEN
    # How to turn subsample_ratio * n into a population: "nearest" or "floor".
    population_rounding: str = "nearest"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not (self.eps0 > 0 and math.isfinite(self.eps0)):
            raise ValueError(f"eps0 must be positive and finite, got {self.eps0}")
        if not 0 <= self.tau < 1:
            raise ValueError(f"tau must lie in [0, 1), got {self.tau}")
        if not 0 < self.subsample_ratio <= 1:
            raise ValueError(f"subsample_ratio must lie in (0, 1], got {self.subsample_ratio}")
        if self.population_rounding not in ("nearest", "floor"):
            raise ValueError(f"unknown population_rounding {self.population_rounding!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def effective_n(self) -> int:
        scaled = self.subsample_ratio * self.n
        if self.population_rounding == "floor":
            return math.floor(scaled + 1e-9)
        return int(round(scaled))


def _mixture_logs(eps0: float) -> tuple[float, float]:
    """(log q, log(1 - q)) without cancellation."""
    log_q = -math.log1p(math.exp(-eps0))
    return log_q, log_q - eps0


def _check_support(n: int, a: int, b: int) -> None:
    if a < 0 or b < 0:
        raise ValueError(f"coordinates must be nonnegative, got ({a}, {b})")
    if a + b > n:
        raise ValueError(f"(a, b) = ({a}, {b}) lies outside the support a + b <= n = {n}")


def _log_p1(n, eps0, a, b):
    # P1 = (a, b) iff C = a + b - 1 and A = a - 1.
    rows = a + b - 1
    return _row_logs(n, eps0, rows) + binom_logpmf(a - 1, rows, 0.5)


def _log_p0(n, eps0, a, b):
    # P0 = (a, b) iff C = a + b - 1 and A = a.
    rows = a + b - 1
    return _row_logs(n, eps0, rows) + binom_logpmf(a, rows, 0.5)


def p1_mass(n: int, eps0: float, a: int, b: int) -> float:
    """P(P1 = (a, b)); zero when a = 0."""
    _check_support(n, a, b)
    if a == 0:
        return 0.0
    return float(np.exp(_log_p1(n, eps0, a, b)))


def p0_mass(n: int, eps0: float, a: int, b: int) -> float:
    """P(P0 = (a, b)); zero when b = 0.

    For a, b > 0 this equals ``(b / a) * p1_mass(n, eps0, a, b)``.
    """
    _check_support(n, a, b)
    if b == 0:
        return 0.0
    return float(np.exp(_log_p0(n, eps0, a, b)))


def pair_mass(n: int, eps0: float, a: int, b: int) -> tuple[float, float]:
    """Masses of (a, b) under P and under Q."""
    _check_support(n, a, b)
    if a + b < 1:
        raise ValueError("(0, 0) is not in the support")
    p1 = p1_mass(n, eps0, a, b)
    p0 = p0_mass(n, eps0, a, b)
    q = 1.0 / (1.0 + math.exp(-eps0))
    return q * p1 + (1 - q) * p0, (1 - q) * p1 + q * p0


def loss_value(eps0: float, a, b):
    """log(P(a, b) / Q(a, b)); always within [-eps0, eps0].

    Uses ``(q*a + (1-q)*b) / (q*b + (1-q)*a)`` which needs no probabilities.
    Accepts numpy arrays.
    """
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    if np.any((a_arr == 0) & (b_arr == 0)):
        raise ValueError("loss is undefined at (0, 0)")
    r = math.exp(-eps0)
    out = np.log(a_arr + r * b_arr) - np.log(b_arr + r * a_arr)
    # b = 0 or a = 0 are exactly +-eps0; avoid log round-off there.
    out = np.where(b_arr == 0, eps0, np.where(a_arr == 0, -eps0, out))
    return float(out) if out.ndim == 0 else out


def _threads() -> int:
    raw = os.environ.get("SHUFFLE_ACCT_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, min(cap, int(raw)))
        except ValueError:
            pass
    return cap


def _row_logs(n: int, eps0: float, rows):
    """log P(C = i) for C ~ Bin(n - 1, exp(-eps0))."""
    return binom_logpmf(rows, n - 1, math.exp(-eps0), -math.expm1(-eps0))


def _enumerate_rows(n: int, eps0: float, rows: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Losses and (P, Q) masses of points a in [lo_i, hi_i] of each row C = i.

    Point (a, i + 1 - a) collects P1 mass from A = a - 1 and P0 mass from
    A = a, so each row evaluates Bin(i, 1/2) once over A in [lo_i - 1, hi_i].
    """
    counts = hi - lo + 1
    ext_counts = counts + 1
    ext_starts = np.cumsum(ext_counts) - ext_counts
    ext_rows = np.repeat(rows, ext_counts)
    local = np.arange(ext_rows.size) - np.repeat(ext_starts, ext_counts)
    split = binom_logpmf(np.repeat(lo - 1, ext_counts) + local, ext_rows, 0.5)
    last = local == np.repeat(counts, ext_counts)
    first = local == 0
    log_row = np.repeat(_row_logs(n, eps0, rows), counts)
    log_p1 = log_row + split[~last]
    log_p0 = log_row + split[~first]
    row = ext_rows[~last]
    a = (np.repeat(lo - 1, ext_counts) + local)[~first]
    log_q, log_1mq = _mixture_logs(eps0)
    p_mass = np.exp(np.logaddexp(log_q + log_p1, log_1mq + log_p0))
    q_mass = np.exp(np.logaddexp(log_1mq + log_p1, log_q + log_p0))
    return loss_value(eps0, a, row + 1 - a).reshape(-1), p_mass, q_mass


def _clones_arrays(n: int, eps0: float, tau: float, max_atoms: int):
    """Enumerate the (possibly truncated) clones support.

    Returns losses, P masses, Q masses. With ``tau > 0`` only rows C in the
    Hoeffding window (tail tau/2) are kept, and in each row only A in the
    window of Bin(C, 1/2) (tail tau/2); a point (a, b) is kept when either of
    its two generating A values (a - 1 or a) is in the window.
    """
    if tau > 0 and n > 1:
        c_lo, c_hi = hoeffding_window(n - 1, math.exp(-eps0), tau / 2)
    else:
        c_lo, c_hi = 0, n - 1
    rows = np.arange(c_lo, c_hi + 1, dtype=np.int64)
    if tau > 0 and n > 1:
        lo, hi = hoeffding_windows(rows, 0.5, tau / 2)
        hi = np.minimum(hi + 1, rows + 1)
    else:
        lo = np.zeros_like(rows)
        hi = rows + 1
    total = int(np.sum(hi - lo + 1))
    if total > max_atoms:
        raise ResourceLimitError(
            f"clones enumeration needs {total} atoms, above the cap of {max_atoms}; "
            "use a positive tau or raise max_atoms")
    chunks = [slice(s, s + _ROW_CHUNK) for s in range(0, rows.size, _ROW_CHUNK)]

    def work(sl):
        return _enumerate_rows(n, eps0, rows[sl], lo[sl], hi[sl])

    workers = min(_threads(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))  # map keeps chunk order
    else:
        parts = [work(sl) for sl in chunks]
    losses = np.concatenate([p[0] for p in parts])
    p_mass = np.concatenate([p[1] for p in parts])
    q_mass = np.concatenate([p[2] for p in parts])
    return losses, p_mass, q_mass, _excluded(n, eps0, c_lo, c_hi, rows, lo, hi)


def _excluded(n: int, eps0: float, c_lo: int, c_hi: int, rows, lo, hi) -> tuple[float, float]:
    """Exact (P, Q) mass of the points left out of the enumeration.

    Computed from binomial tails rather than as one minus the kept mass, so
    an untruncated build gets exactly 0 and no round-off floor.
    """
    trials, r = n - 1, math.exp(-eps0)
    if trials == 0:
        return 0.0, 0.0
    outer = float(binom.cdf(c_lo - 1, trials, r) + binom.sf(c_hi, trials, r))
    weight = np.exp(_row_logs(n, eps0, rows))
    # In row C a P1 point sits at a = A + 1 and a P0 point at a = A.
    out1 = binom.cdf(lo - 2, rows, 0.5) + binom.sf(hi - 1, rows, 0.5)
    out0 = binom.cdf(lo - 1, rows, 0.5) + binom.sf(hi, rows, 0.5)
    q = 1.0 / (1.0 + r)
    ex_p = outer + float(np.sum(weight * (q * out1 + (1 - q) * out0)))
    ex_q = outer + float(np.sum(weight * ((1 - q) * out1 + q * out0)))
    return ex_p, ex_q


def _finish(params: ClonesParams, losses, p_mass, q_mass, excluded, meta: dict) -> DiscretePLD:
    if params.direction is Direction.NUM_OVER_DEN:
        out_losses, masses, trunc = losses, p_mass, excluded[0]
    elif params.direction is Direction.DEN_OVER_NUM:
        out_losses, masses, trunc = -losses, q_mass, excluded[1]
    else:
        raise ValueError("build one direction at a time; MAX_BOTH is resolved by the accountant")
    return DiscretePLD(out_losses, masses, 0.0, trunc, params.direction, meta)


def build_clones_pld_full(params: ClonesParams, max_atoms: int = DEFAULT_MAX_ATOMS) -> DiscretePLD:
    """Exact clones PLD with one atom per support point (O(n^2) atoms)."""
    losses, p_mass, q_mass, _ = _clones_arrays(params.n, params.eps0, 0.0, max_atoms)
    meta = {"mechanism": "clones", "n": params.n, "eps0": params.eps0, "tau": 0.0}
    return _finish(params, losses, p_mass, q_mass, (0.0, 0.0), meta)


def build_clones_pld(params: ClonesParams, max_atoms: int = DEFAULT_MAX_ATOMS) -> DiscretePLD:
    """Hoeffding-truncated clones PLD with O(n log(4/tau)) atoms.

    All mass outside the enumerated windows goes to ``truncated_mass``, which
    is at most ``tau``. ``tau == 0`` or ``n == 1`` enumerates everything.
    """
    if params.subsample_ratio != 1:
        return build_subsampled_clones_pld(params, max_atoms)
    if params.tau == 0 or params.n == 1:
        return build_clones_pld_full(params, max_atoms)
    losses, p_mass, q_mass, excluded = _clones_arrays(params.n, params.eps0, params.tau,
                                                      max_atoms)
    meta = {"mechanism": "clones", "n": params.n, "eps0": params.eps0, "tau": params.tau}
    return _finish(params, losses, p_mass, q_mass, excluded, meta)


def subsampled_loss(loss, ratio: float):
    """log(ratio * e^loss + 1 - ratio), evaluated as log1p(ratio * expm1(loss))."""
    return np.log1p(ratio * np.expm1(loss))


def build_subsampled_clones_pld(params: ClonesParams,
                                max_atoms: int = DEFAULT_MAX_ATOMS) -> DiscretePLD:
    """PLD of the pair (g*P + (1-g)*Q, Q) for subsampling ratio g.

    P and Q are the clones pair for the subsampled population; see
    :attr:`ClonesParams.effective_n` for how it is rounded.
    """
    ratio = params.subsample_ratio
    if ratio == 1:
        return build_clones_pld(params, max_atoms)
    n_eff = params.effective_n
    if n_eff < 1:
        raise ValueError(
            f"subsampled population {ratio} * {params.n} rounds to {n_eff} < 1")
    tau = params.tau if n_eff > 1 else 0.0
    losses, p_mass, q_mass, (ex_p, ex_q) = _clones_arrays(n_eff, params.eps0, tau, max_atoms)
    shifted = subsampled_loss(losses, ratio)
    meta = {"mechanism": "clones-subsampled", "n": params.n, "n_eff": n_eff,
            "eps0": params.eps0, "tau": tau, "subsample_ratio": ratio}
    if params.direction is Direction.NUM_OVER_DEN:
        out_losses, masses = shifted, ratio * p_mass + (1 - ratio) * q_mass
        trunc = ratio * ex_p + (1 - ratio) * ex_q
    elif params.direction is Direction.DEN_OVER_NUM:
        out_losses, masses, trunc = -shifted, q_mass, ex_q
    else:
        raise ValueError("build one direction at a time; MAX_BOTH is resolved by the accountant")
    return DiscretePLD(out_losses, masses, 0.0, trunc, params.direction, meta)
