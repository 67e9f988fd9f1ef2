"""Independent ground truth for the accountant.

* Exhaustive enumeration of every joint outcome of a tiny shuffled k-RR
  instance, grouped into adversary views, in exact rational arithmetic.
* A Monte Carlo estimate of the hockey-stick divergence between shuffled
  Gaussian outputs, plus the closed form of the one-user case.
"""

from __future__ import annotations

import itertools
import math
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr

from .krr import Adversary
from .pld import DiscretePLD, Direction, coalesce

MAX_OUTCOMES = 1_000_000
MC_CHUNK = 1 << 18


@dataclass(frozen=True)
class ViewEnumerationResult:
    """Exact divergences between the adversary's views of X and X'.

    The ``truthful_*`` fields condition on the differing user reporting
    truthfully; they are only set for the strong adversary, who observes
    that bit. The other fields cover the full view space.
    """

    hockey_delta: float
    tail_probability: float
    reverse_hockey_delta: float
    total_mass_x: float
    truthful_hockey_delta: Optional[float] = None
    truthful_tail_probability: Optional[float] = None
    truthful_reverse_hockey_delta: Optional[float] = None


def _view_distributions(n: int, k: int, gamma: float, adversary: Adversary):
    """Exact view probabilities under X = (1, ..., 1) and X' = (1, ..., 1, 2).

    A view is (visible randomisation flags, sorted multiset of reports); the
    shuffler's permutation only enters through the multiset.
    """
    if n < 1 or k < 2:
        raise ValueError("need n >= 1 and k >= 2")
    if (k + 1) ** n > MAX_OUTCOMES:
        raise ValueError(f"(k+1)^n = {(k + 1) ** n} outcomes exceed the cap {MAX_OUTCOMES}")
    g = Fraction(gamma)
    truthful, noise = 1 - g, g / k
    weight = [truthful ** t * noise ** (n - t) for t in range(n + 1)]
    p_x: dict = defaultdict(Fraction)
    p_xp: dict = defaultdict(Fraction)
    # 0 means "reports the truth", v >= 1 means "reports noise value v".
    for outcome in itertools.product(range(k + 1), repeat=n):
        flags = tuple(v > 0 for v in outcome)
        prob = weight[flags.count(False)]
        if prob == 0:
            continue
        others = [v if v else 1 for v in outcome[:-1]]
        last = outcome[-1]
        seen = flags if adversary is Adversary.STRONG else flags[:-1]
        view_x = (seen, tuple(sorted(others + [last if last else 1])))
        view_xp = (seen, tuple(sorted(others + [last if last else 2])))
        p_x[view_x] += prob
        p_xp[view_xp] += prob
    return p_x, p_xp


def _divergences(p_x: dict, p_xp: dict, eps: float, keys) -> tuple[float, float, float]:
    alpha = Fraction(math.exp(eps))
    hockey = reverse = tail = Fraction(0)
    for key in keys:
        px, pxp = p_x.get(key, Fraction(0)), p_xp.get(key, Fraction(0))
        if px > alpha * pxp:
            hockey += px - alpha * pxp
        if pxp > alpha * px:
            reverse += pxp - alpha * px
        if px > 0 and px >= alpha * pxp:
            tail += px
    return hockey, tail, reverse


def krr_view_enumeration(n: int, k: int, gamma: float, eps: float,
                         adversary: Adversary = Adversary.STRONG) -> ViewEnumerationResult:
    """Hockey-stick divergences and loss tail of shuffled k-RR by brute force."""
    p_x, p_xp = _view_distributions(n, k, gamma, adversary)
    keys = set(p_x) | set(p_xp)
    hockey, tail, reverse = _divergences(p_x, p_xp, eps, keys)
    result = dict(hockey_delta=float(hockey), tail_probability=float(tail),
                  reverse_hockey_delta=float(reverse), total_mass_x=float(sum(p_x.values())))
    if adversary is Adversary.STRONG and gamma < 1:
        truthful = [key for key in keys if not key[0][-1]]
        scale = 1 - Fraction(gamma)
        h, t, r = _divergences(p_x, p_xp, eps, truthful)
        result.update(truthful_hockey_delta=float(h / scale),
                      truthful_tail_probability=float(t / scale),
                      truthful_reverse_hockey_delta=float(r / scale))
    return ViewEnumerationResult(**result)


def krr_view_pld(n: int, k: int, gamma: float, adversary: Adversary = Adversary.STRONG,
                 truthful_only: bool = False) -> DiscretePLD:
    """Distribution of log(P_X(V) / P_X'(V)) for V drawn from the view of X.

    With ``truthful_only`` (strong adversary) the views are conditioned on
    the differing user reporting truthfully.
    """
    p_x, p_xp = _view_distributions(n, k, gamma, adversary)
    keys = list(p_x)
    scale = Fraction(1)
    if truthful_only:
        if adversary is not Adversary.STRONG:
            raise ValueError("only the strong adversary observes the differing user's flag")
        keys = [key for key in keys if not key[0][-1]]
        scale = 1 - Fraction(gamma)
    losses, masses = [], []
    infinity = Fraction(0)
    for key in keys:
        px, pxp = p_x[key], p_xp.get(key, Fraction(0))
        if px == 0:
            continue
        if pxp == 0:
            infinity += px
            continue
        ratio = px / pxp
        losses.append(math.log(ratio.numerator) - math.log(ratio.denominator))
        masses.append(float(px / scale))
    meta = {"mechanism": "krr-oracle", "adversary": adversary.value, "n": n, "k": k,
            "gamma": gamma, "truthful_only": truthful_only}
    pld = DiscretePLD(np.array(losses), np.array(masses), float(infinity / scale), 0.0,
                      Direction.NUM_OVER_DEN, meta)
    return coalesce(pld, 0.0)


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    std_error: float
    samples: int
    seed: int


def _mc_chunk(n: int, sigma: float, eps: float, size: int, seed_seq) -> tuple[float, float]:
    rng = np.random.default_rng(seed_seq)
    which = rng.integers(n, size=size)
    t = sigma * rng.standard_normal((size, n))
    t[np.arange(size), which] += 1.0
    # log f_X'(t) - log f_X(t) for the uniform mixture of unit shifts.
    log_ratio = logsumexp((2.0 * t - 1.0) / (2.0 * sigma * sigma), axis=1) - math.log(n)
    values = -np.expm1(np.minimum(0.0, eps - log_ratio))
    return float(np.sum(values)), float(np.sum(values * values))


def gaussian_shuffle_mc(n: int, sigma: float, eps: float, samples: int, seed: int = 0,
                        workers: int | None = None) -> McEstimate:
    """Unbiased Monte Carlo estimate of H_{e^eps}(M(X') || M(X)) for shuffled Gaussians.

    ``M(X) ~ N(0, sigma^2 I_n)`` and ``M(X')`` is the uniform mixture of
    ``N(e_i, sigma^2 I_n)``. Samples come from ``M(X')`` and the estimator
    averages ``max(0, 1 - e^eps f_X / f_X')``. Work is split into fixed-size
    chunks with seeds spawned from ``seed``, so the result does not depend on
    the number of workers.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if samples < 1000:
        raise ValueError(f"need at least 1000 samples, got {samples}")
    sizes = [MC_CHUNK] * (samples // MC_CHUNK)
    if samples % MC_CHUNK:
        sizes.append(samples % MC_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    if workers is None:
        env = os.environ.get("SHUFFLE_ACCT_THREADS")
        workers = int(env) if env and env.isdigit() else 1
    jobs = list(zip(sizes, seeds))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: _mc_chunk(n, sigma, eps, *job), jobs))
    else:
        parts = [_mc_chunk(n, sigma, eps, *job) for job in jobs]
    total = math.fsum(p[0] for p in parts)
    total_sq = math.fsum(p[1] for p in parts)
    mean = total / samples
    var = max(0.0, total_sq / samples - mean * mean) * samples / (samples - 1)
    return McEstimate(min(1.0, max(0.0, mean)), math.sqrt(var / samples), samples, seed)


def closed_form_gaussian_delta(sigma: float, eps: float) -> float:
    """Tight delta(eps) of the sensitivity-1 Gaussian mechanism with noise scale sigma."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    a = 1.0 / (2.0 * sigma)
    first = ndtr(a - eps * sigma)
    second = math.exp(eps + log_ndtr(-a - eps * sigma))
    return min(1.0, max(0.0, float(first - second)))
