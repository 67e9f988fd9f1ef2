"""FFT composition of privacy loss distributions and delta/epsilon queries.

Losses are rounded up onto the grid ``x_j = -L + j * dx`` (``dx = 2L/m``),
which can only increase delta. Composition multiplies the discrete Fourier
transforms of the grid densities, so mass leaving ``[-L, L)`` wraps around;
:func:`compose` warns when the composed density comes close to the edges.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .pld import DiscretePLD

BOUNDARY_CELLS = 10
BOUNDARY_MASS_LIMIT = 1e-8
NAIVE_MAX_ATOMS = 10_000_000


class DeltaForm(enum.Enum):
    # delta = inf-term + sum over s > eps of (1 - e^(eps - s)) * mass
    HOCKEY_STICK = "hockey-stick"
    # delta = inf-term + sum over s >= eps of mass
    TAIL_PROBABILITY = "tail"


class WrapAroundWarning(UserWarning):
    """Composed mass sits near the grid boundary, so circular wrap may bias delta."""


class DeltaRangeError(ValueError):
    """Requested delta is not achievable on the configured grid."""

    def __init__(self, target: float, low: float, high: float):
        super().__init__(
            f"target delta {target!r} outside the achievable range [{low!r}, {high!r}]")
        self.target, self.low, self.high = target, low, high


@dataclass(frozen=True)
class AccountantConfig:
    half_width: float = 20.0
    grid_size: int = 2 ** 20

    def __post_init__(self):
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if int(self.grid_size) != self.grid_size or self.grid_size < 2 or self.grid_size % 2:
            raise ValueError(f"grid_size must be a positive even integer, got {self.grid_size}")
        object.__setattr__(self, "grid_size", int(self.grid_size))

    @property
    def dx(self) -> float:
        return 2 * self.half_width / self.grid_size

    @property
    def grid(self) -> np.ndarray:
        return -self.half_width + np.arange(self.grid_size) * self.dx


def round_grid_size(requested: float, power_of_two: bool = True) -> int:
    """Smallest usable grid size >= ``requested`` (power of two by default, else even)."""
    requested = math.ceil(requested)
    if requested < 2:
        requested = 2
    if power_of_two:
        return 1 << (requested - 1).bit_length()
    return requested + (requested % 2)


@dataclass(frozen=True)
class GridDensity:
    masses: np.ndarray
    # Mass treated as infinite loss: PLD ledgers plus right overflow.
    infinity_mass: float


def discretize(pld: DiscretePLD, config: AccountantConfig) -> GridDensity:
    """Round every loss up to the next grid point.

    Losses beyond the last grid point go to the infinity ledger; losses
    below ``-L`` are clamped onto ``-L``.
    """
    m, L, dx = config.grid_size, config.half_width, config.dx
    idx = np.ceil((pld.losses + L) / dx)
    over = idx > m - 1
    idx = np.clip(idx, 0, m - 1).astype(np.int64)
    masses = np.bincount(idx[~over], weights=pld.masses[~over], minlength=m)
    overflow = float(np.sum(pld.masses[over]))
    return GridDensity(masses, pld.infinity_mass + pld.truncated_mass + overflow)


@dataclass(frozen=True)
class ComposedDensity:
    """Composed grid density; delta queries are O(1) after an O(m) suffix-sum pass."""

    grid_masses: np.ndarray
    infinity_mass: float
    config: AccountantConfig
    counts: tuple[int, ...] = ()

    @cached_property
    def grid(self) -> np.ndarray:
        return self.config.grid

    @cached_property
    def _suffix(self):
        x = self.grid
        mass = self.grid_masses
        # Reverse cumulative sums accumulate from the smallest terms upward.
        tail = np.cumsum(mass[::-1])[::-1]
        weighted = np.cumsum((mass * np.exp(-x))[::-1])[::-1]
        return np.append(tail, 0.0), np.append(weighted, 0.0)

    def delta(self, eps: float, form: DeltaForm = DeltaForm.HOCKEY_STICK) -> float:
        L, dx, m = self.config.half_width, self.config.dx, self.config.grid_size
        tail, weighted = self._suffix
        pos = (eps + L) / dx
        if form is DeltaForm.HOCKEY_STICK:
            # first grid index with x_j > eps; the atom at x_j == eps has weight 0
            start = math.floor(pos) + 1
        else:
            start = math.ceil(pos)
        start = min(max(start, 0), m)
        # Nudge the start index so round-off in pos cannot misplace the boundary.
        x = self.grid
        if form is DeltaForm.HOCKEY_STICK:
            while start > 0 and x[start - 1] > eps:
                start -= 1
            while start < m and x[start] <= eps:
                start += 1
            value = tail[start] - math.exp(eps) * weighted[start] if start < m else 0.0
        else:
            while start > 0 and x[start - 1] >= eps:
                start -= 1
            while start < m and x[start] < eps:
                start += 1
            value = tail[start]
        value = max(0.0, value) + self.infinity_mass
        return float(min(1.0, max(0.0, value)))

    def total_mass(self) -> float:
        return float(np.sum(self.grid_masses)) + self.infinity_mass


CompositionSpec = Sequence[tuple[DiscretePLD, int]]


def _as_spec(spec) -> list[tuple[DiscretePLD, int]]:
    if isinstance(spec, DiscretePLD):
        return [(spec, 1)]
    entries = list(spec)
    if not entries:
        raise ValueError("composition spec needs at least one (pld, count) entry")
    for pld, count in entries:
        if int(count) != count or count < 1:
            raise ValueError(f"composition counts must be positive integers, got {count}")
    return [(pld, int(count)) for pld, count in entries]


def compose(spec: CompositionSpec, config: AccountantConfig) -> ComposedDensity:
    """Compose each PLD ``count`` times (heterogeneous entries allowed) by FFT."""
    entries = _as_spec(spec)
    m = config.grid_size
    half = m // 2
    if len(entries) == 1 and entries[0][1] == 1:
        # Nothing to convolve; skip the transform and its round-off.
        grid = discretize(entries[0][0], config)
        return ComposedDensity(grid.masses, grid.infinity_mass, config, (1,))
    spectrum = None
    survive = 1.0
    for pld, count in entries:
        grid = discretize(pld, config)
        # Put loss 0 at index 0 so circular index sums add losses.
        term = np.fft.rfft(np.roll(grid.masses, -half)) ** count
        spectrum = term if spectrum is None else spectrum * term
        survive *= (1.0 - grid.infinity_mass) ** count
    masses = np.roll(np.fft.irfft(spectrum, n=m), half)
    # True masses are nonnegative, so the deepest negative cell measures the
    # round-off level; cells within twice that are indistinguishable from 0.
    # Left in, they add up to ~1e-15 of spurious tail over a 2^20 grid.
    noise = -float(masses.min())
    masses[masses <= 2.0 * max(noise, 0.0)] = 0.0
    edge = BOUNDARY_CELLS
    boundary = float(np.sum(masses[:edge]) + np.sum(masses[-edge:]))
    if boundary > BOUNDARY_MASS_LIMIT:
        warnings.warn(
            f"composed mass {boundary:.3g} within {edge} cells of +-L={config.half_width}; "
            "circular wrap-around may bias delta, increase the grid half-width",
            WrapAroundWarning, stacklevel=2)
    return ComposedDensity(masses, 1.0 - survive, config, tuple(c for _, c in entries))


def delta_at(composed: ComposedDensity, eps: float,
             form: DeltaForm = DeltaForm.HOCKEY_STICK) -> float:
    return composed.delta(eps, form)


def epsilon_for_delta(spec_or_composed, config: AccountantConfig | None, target_delta: float,
                      form: DeltaForm = DeltaForm.HOCKEY_STICK, tol: float = 1e-9,
                      max_iter: int = 200) -> float:
    """Smallest epsilon (to within ``tol``) with delta(epsilon) <= target, by bisection.

    Returns the upper end of the final bracket, so the reported epsilon is
    never optimistic. Accepts either a composition spec (composed once here)
    or an existing :class:`ComposedDensity`.
    """
    if not 0 < target_delta < 1:
        raise DeltaRangeError(target_delta, float("nan"), float("nan"))
    if isinstance(spec_or_composed, ComposedDensity):
        composed = spec_or_composed
    else:
        composed = compose(spec_or_composed, config)
    L = composed.config.half_width
    low_delta, high_delta = composed.delta(L, form), composed.delta(-L, form)
    if target_delta < low_delta or target_delta > high_delta:
        raise DeltaRangeError(target_delta, low_delta, high_delta)
    lo, hi = -L, L
    if composed.delta(lo, form) <= target_delta:
        return lo
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if composed.delta(mid, form) <= target_delta:
            hi = mid
        else:
            lo = mid
    return hi


def exact_delta_single(pld: DiscretePLD, eps: float,
                       form: DeltaForm = DeltaForm.HOCKEY_STICK) -> float:
    """Grid-free delta of a single (uncomposed) PLD at its exact losses."""
    losses, masses = pld.losses, pld.masses
    if form is DeltaForm.HOCKEY_STICK:
        above = losses > eps
        value = float(np.sum(-np.expm1(eps - losses[above]) * masses[above]))
    else:
        value = float(np.sum(masses[losses >= eps]))
    return float(min(1.0, max(0.0, value + pld.tail_mass)))


def naive_compose(pld: DiscretePLD, n_c: int, max_atoms: int = NAIVE_MAX_ATOMS) -> DiscretePLD:
    """Exact n_c-fold self-convolution of the atom list (test oracle).

    Losses that agree exactly after summation are merged.
    """
    if int(n_c) != n_c or n_c < 1:
        raise ValueError(f"n_c must be a positive integer, got {n_c}")
    finite = 1.0 - pld.tail_mass
    losses, masses = pld.losses.copy(), pld.masses.copy()
    for _ in range(int(n_c) - 1):
        size = losses.size * pld.losses.size
        if size > max_atoms:
            raise ValueError(f"naive composition would create {size} atoms (cap {max_atoms})")
        losses = (losses[:, None] + pld.losses[None, :]).reshape(-1)
        masses = (masses[:, None] * pld.masses[None, :]).reshape(-1)
        losses, inverse = np.unique(losses, return_inverse=True)
        masses = np.bincount(inverse.reshape(-1), weights=masses, minlength=losses.size)
    inf = 1.0 - finite ** int(n_c)
    return DiscretePLD(losses, masses, inf, 0.0, pld.direction, dict(pld.meta))


def delta_curve(spec: CompositionSpec, config: AccountantConfig, eps_values,
                form: DeltaForm = DeltaForm.HOCKEY_STICK) -> np.ndarray:
    composed = compose(spec, config)
    return np.array([composed.delta(float(e), form) for e in eps_values])
