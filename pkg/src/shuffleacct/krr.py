"""Privacy loss distributions for shuffled k-ary randomised response.

Each user reports the truth with probability ``1 - gamma`` and a uniform
value in ``[k]`` otherwise. The neighbouring datasets differ in the last
user, whose value is class 1 under X and class 2 under X'. The blanket
counts ``G1, G2`` are the noise reports of the other ``n - 1`` users that
land in classes 1 and 2.

Two adversaries are modelled. The strong one also sees who randomised,
including the differing user, and the privacy loss is ``log((G1+1)/G2)``.
The weak one does not see whether the differing user randomised.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import binom

from .binomial import binom_logpmf, hoeffding_window, hoeffding_windows, trinom_logpmf
from .pld import DiscretePLD, Direction, ResourceLimitError, coalesce

# Enumerated (pre-merge) atoms; weak-adversary views merge heavily.
DEFAULT_MAX_ATOMS = 100_000_000
_FLUSH_ATOMS = 4_000_000


class Adversary(enum.Enum):
    STRONG = "strong"
    WEAK = "weak"


class JointModel(enum.Enum):
    # Counts in the two classes are jointly multinomial (the actual view law).
    VIEW_JOINT = "view-joint"
    # Literal reading of the marginals: counts drawn independently.
    INDEPENDENT_MARGINALS = "independent"


@dataclass(frozen=True)
class KrrParams:
    n: int
    k: int
    gamma: float
    tau: float = 0.0
    adversary: Adversary = Adversary.STRONG
    joint_model: JointModel = JointModel.VIEW_JOINT

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if int(self.k) != self.k or self.k < 2:
            raise ValueError(f"k must be an integer >= 2, got {self.k}")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0 <= self.tau < 1:
            raise ValueError(f"tau must lie in [0, 1), got {self.tau}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "k", int(self.k))


def blanket_joint_mass(n: int, k: int, gamma: float, a: int, b: int) -> float:
    """P(G1 = a, G2 = b) for the blanket counts of the other n - 1 users."""
    if a < 0 or b < 0 or a + b > n - 1:
        raise ValueError(f"(a, b) = ({a}, {b}) outside a + b <= n - 1 = {n - 1}")
    p = gamma / k
    return float(np.exp(trinom_logpmf(a, b, n - 1, p, p)))


def _pairs(x_lo, x_hi, y_lo, y_hi):
    """All integer pairs with x in [x_lo, x_hi] and y in [y_lo[x], y_hi[x]] (arrays over x)."""
    xs = np.arange(x_lo, x_hi + 1, dtype=np.int64)
    y_lo = np.broadcast_to(y_lo, xs.shape)
    y_hi = np.broadcast_to(y_hi, xs.shape)
    counts = np.maximum(0, y_hi - y_lo + 1)
    x = np.repeat(xs, counts)
    starts = np.cumsum(counts) - counts
    y = np.repeat(y_lo, counts) + (np.arange(x.size) - np.repeat(starts, counts))
    return x, y


def _merge_equal(loss_parts, mass_parts):
    losses, inverse = np.unique(np.concatenate(loss_parts), return_inverse=True)
    masses = np.bincount(inverse.reshape(-1), weights=np.concatenate(mass_parts),
                         minlength=losses.size)
    return losses, masses


def _outside(lo, hi, trials, p):
    """P(Bin(trials, p) outside [lo, hi]), elementwise, from the two tails."""
    return binom.cdf(np.asarray(lo) - 1, trials, p) + binom.sf(hi, trials, p)


def _strong_excluded(trials: int, p: float, lo: int, hi: int, b_lo: int, joint: bool) -> float:
    """Mass with G2 >= 1 outside the kept (G1, G2) box; G2 = 0 is infinity_mass."""
    a = np.arange(trials + 1)
    if joint:
        y_trials, y_p = trials - a, min(1.0, p / (1.0 - p))
    else:
        y_trials, y_p = trials, p
    positive = binom.sf(0, y_trials, y_p)
    below = np.maximum(0.0, binom.cdf(b_lo - 1, y_trials, y_p) - binom.pmf(0, y_trials, y_p))
    above = binom.sf(hi, y_trials, y_p)
    inside = (a >= lo) & (a <= hi)
    per_a = np.where(inside, below + above, positive)
    return float(np.sum(binom.pmf(a, trials, p) * per_a))


def _weak_excluded(trials, gamma, k, b_lo, b_hi, blanket, log_blanket, c_lo, c_hi,
                   joint: bool) -> float:
    """Mass of (B, n1, n2) outside the kept windows, from binomial tails."""
    total = float(_outside(b_lo, b_hi, trials, gamma))
    for bb, log_pb, lo, hi in zip(blanket, log_blanket, c_lo, c_hi):
        x = np.arange(lo, hi + 1)
        if joint:
            y_trials, y_p = bb - x, 1.0 / (k - 1)
        else:
            y_trials, y_p = bb, 1.0 / k
        y_out = _outside(lo, hi, y_trials, y_p)
        row = _outside(lo, hi, bb, 1.0 / k) + np.sum(binom.pmf(x, bb, 1.0 / k) * y_out)
        total += math.exp(log_pb) * float(row)
    return total


def _finish(losses, masses, infinity_mass: float, trunc: float, meta: dict) -> DiscretePLD:
    keep = masses > 0
    losses, masses = losses[keep], masses[keep]
    pld = DiscretePLD(losses, masses, infinity_mass, trunc, Direction.NUM_OVER_DEN, meta)
    return coalesce(pld, 0.0)


def _check_budget(total: int, max_atoms: int) -> None:
    if total > max_atoms:
        raise ResourceLimitError(
            f"k-RR enumeration needs {total} atoms, above the cap of {max_atoms}; "
            "use a positive tau or raise max_atoms")


def build_krr_strong_pld(params: KrrParams, max_atoms: int = DEFAULT_MAX_ATOMS) -> DiscretePLD:
    """PLD of log((G1 + 1) / G2) with mass under X; G2 = 0 goes to infinity_mass."""
    n, k, gamma, tau = params.n, params.k, params.gamma, params.tau
    trials = n - 1
    p = gamma / k
    if tau > 0:
        lo, hi = hoeffding_window(trials, p, tau / 2)
    else:
        lo, hi = 0, trials
    a_hi = hi
    b_lo = max(1, lo)
    if params.joint_model is JointModel.VIEW_JOINT:
        b_hi = np.minimum(hi, trials - np.arange(lo, a_hi + 1))
    else:
        b_hi = hi
    widths = np.broadcast_to(np.maximum(0, np.asarray(b_hi) - b_lo + 1), (a_hi - lo + 1,))
    _check_budget(int(np.sum(widths)), max_atoms)
    a, b = _pairs(lo, a_hi, b_lo, b_hi)
    if params.joint_model is JointModel.VIEW_JOINT:
        log_mass = trinom_logpmf(a, b, trials, p, p)
    else:
        log_mass = binom_logpmf(a, trials, p) + binom_logpmf(b, trials, p)
    losses = np.log(a + 1.0) - np.log(b.astype(np.float64))
    infinity_mass = math.exp(trials * math.log1p(-p)) if p < 1 else float(trials == 0)
    trunc = 0.0
    if tau > 0 and trials > 0:
        trunc = _strong_excluded(trials, p, lo, hi, b_lo,
                                 params.joint_model is JointModel.VIEW_JOINT)
    meta = {"mechanism": "krr", "adversary": "strong", "n": n, "k": k, "gamma": gamma,
            "tau": tau, "joint_model": params.joint_model.value}
    return _finish(losses, np.exp(log_mass), infinity_mass, trunc, meta)


def build_krr_weak_pld(params: KrrParams, max_atoms: int = DEFAULT_MAX_ATOMS) -> DiscretePLD:
    """PLD against the weak adversary, who does not see whether the differing user randomised.

    Enumerates the number B of randomising users among the other n - 1, the
    blanket counts in classes 1 and 2 given B, and the differing user's
    report class. The loss of a view with class counts (n1, n2) is
    ``log(((1-g) n1 + g/k (B+1)) / ((1-g) n2 + g/k (B+1)))``.
    """
    n, k, gamma, tau = params.n, params.k, params.gamma, params.tau
    if gamma <= 0:
        raise ValueError("the weak-adversary model needs gamma > 0")
    trials = n - 1
    if tau > 0:
        b_lo, b_hi = hoeffding_window(trials, gamma, tau / 3)
    else:
        b_lo, b_hi = 0, trials
    blanket = np.arange(b_lo, b_hi + 1, dtype=np.int64)
    log_blanket = binom_logpmf(blanket, trials, gamma)
    if tau > 0:
        c_lo, c_hi = hoeffding_windows(blanket, 1.0 / k, tau / 3)
    else:
        c_lo, c_hi = np.zeros_like(blanket), blanket.copy()

    noise = gamma / k
    if params.joint_model is JointModel.VIEW_JOINT:
        # One categorical draw for the differing user: class 1, class 2, or other.
        outcomes = [(1, 0, 1 - gamma + noise), (0, 1, noise), (0, 0, gamma * (k - 2) / k)]
    else:
        p1, p2 = 1 - gamma + noise, noise
        outcomes = [(1, 1, p1 * p2), (1, 0, p1 * (1 - p2)),
                    (0, 1, (1 - p1) * p2), (0, 0, (1 - p1) * (1 - p2))]
    outcomes = [o for o in outcomes if o[2] > 0]
    if params.joint_model is JointModel.VIEW_JOINT:
        pairs = sum(int(np.sum(np.maximum(0, np.minimum(hi, bb - np.arange(lo, hi + 1)) - lo + 1)))
                    for bb, lo, hi in zip(blanket, c_lo, c_hi))
    else:
        pairs = int(np.sum(np.maximum(0, c_hi - c_lo + 1) ** 2))
    _check_budget(pairs * len(outcomes), max_atoms)

    loss_parts, mass_parts = [], []
    pending = 0
    for bb, log_pb, lo, hi in zip(blanket, log_blanket, c_lo, c_hi):
        if not np.isfinite(log_pb):
            continue
        if params.joint_model is JointModel.VIEW_JOINT:
            y_hi = np.minimum(hi, bb - np.arange(lo, hi + 1))
            x, y = _pairs(lo, hi, lo, y_hi)
            log_xy = trinom_logpmf(x, y, bb, 1.0 / k, 1.0 / k)
        else:
            x, y = _pairs(lo, hi, lo, hi)
            log_xy = binom_logpmf(x, bb, 1.0 / k) + binom_logpmf(y, bb, 1.0 / k)
        base = np.exp(log_pb + log_xy)
        shared = noise * (bb + 1)
        for d1, d2, weight in outcomes:
            num = (1 - gamma) * (x + d1) + shared
            den = (1 - gamma) * (y + d2) + shared
            loss_parts.append(np.log(num) - np.log(den))
            mass_parts.append(base * weight)
            pending += x.size
        if pending > _FLUSH_ATOMS:
            # Many (n1, n2, B) share a ratio; merging early bounds memory.
            merged_losses, merged_masses = _merge_equal(loss_parts, mass_parts)
            loss_parts, mass_parts = [merged_losses], [merged_masses]
            pending = merged_losses.size
    trunc = 0.0
    if tau > 0 and trials > 0:
        trunc = _weak_excluded(trials, gamma, k, b_lo, b_hi, blanket, log_blanket, c_lo, c_hi,
                               params.joint_model is JointModel.VIEW_JOINT)
    losses = np.concatenate(loss_parts) if loss_parts else np.empty(0)
    masses = np.concatenate(mass_parts) if mass_parts else np.empty(0)
    meta = {"mechanism": "krr", "adversary": "weak", "n": n, "k": k, "gamma": gamma,
            "tau": tau, "joint_model": params.joint_model.value}
    return _finish(losses, masses, 0.0, trunc, meta)


def build_krr_pld(params: KrrParams, max_atoms: int = DEFAULT_MAX_ATOMS) -> DiscretePLD:
    if params.adversary is Adversary.STRONG:
        return build_krr_strong_pld(params, max_atoms)
    return build_krr_weak_pld(params, max_atoms)


def weak_loss_bound(k: int, gamma: float) -> float:
    """Largest |loss| the weak-adversary PLD can reach."""
    return math.log1p(k * (1 - gamma) / gamma)


class AnalyticEpsilon(NamedTuple):
    epsilon: float
    # The closed-form bound only holds for epsilon <= 1.
    valid: bool


def balle_analytic_epsilon(n: int, k: int, gamma: float, delta: float) -> AnalyticEpsilon:
    """Invert the privacy-blanket bound for k-RR to get epsilon at a given delta.

    The bound states that shuffled k-RR is (eps, delta)-DP whenever
    ``gamma >= max(14 k log(2/delta) / ((n-1) eps^2), 27 k / ((n-1) eps))``
    and ``eps <= 1``.
    """
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    scale = (n - 1) * gamma
    eps = max(math.sqrt(14 * k * math.log(2 / delta) / scale), 27 * k / scale)
    return AnalyticEpsilon(eps, eps <= 1)
