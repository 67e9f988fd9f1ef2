"""Discrete privacy loss distributions.

A :class:`DiscretePLD` holds finite-loss atoms as two parallel numpy arrays
plus two out-of-band ledgers: ``infinity_mass`` for outcomes the denominator
distribution cannot produce, and ``truncated_mass`` for mass dropped on
purpose by tail truncation. Both ledgers are treated as infinite loss when
computing delta.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

MASS_TOLERANCE = 1e-9


class ResourceLimitError(ValueError):
    """Raised when an enumeration would exceed the configured atom budget."""


class Direction(enum.Enum):
    """Which distribution of the dominating pair sits in the numerator."""

    NUM_OVER_DEN = "num-over-den"
    DEN_OVER_NUM = "den-over-num"
    # Accounting-time only: evaluate both directions and keep the worse one.
    MAX_BOTH = "max-both"


class LossAtom(NamedTuple):
    loss: float
    mass: float


@dataclass(frozen=True, eq=False)
class DiscretePLD:
    """Finite atoms ``(losses[i], masses[i])`` plus infinity/truncation ledgers.

    Equality is identity; compare the arrays when a value check is wanted.
    """

    losses: np.ndarray
    masses: np.ndarray
    infinity_mass: float = 0.0
    truncated_mass: float = 0.0
    direction: Direction = Direction.NUM_OVER_DEN
    # Extra provenance (mechanism parameters); never used in arithmetic.
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        losses = np.ascontiguousarray(self.losses, dtype=np.float64).reshape(-1)
        masses = np.ascontiguousarray(self.masses, dtype=np.float64).reshape(-1)
        if losses.shape != masses.shape:
            raise ValueError(
                f"losses and masses differ in length: {losses.size} vs {masses.size}")
        if self.direction is Direction.MAX_BOTH:
            raise ValueError("a single PLD cannot have direction MAX_BOTH")
        losses.flags.writeable = False
        masses.flags.writeable = False
        object.__setattr__(self, "losses", losses)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "infinity_mass", float(self.infinity_mass))
        object.__setattr__(self, "truncated_mass", float(self.truncated_mass))

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]], **kwargs) -> "DiscretePLD":
        atoms = list(atoms)
        losses = np.array([a[0] for a in atoms], dtype=np.float64)
        masses = np.array([a[1] for a in atoms], dtype=np.float64)
        return cls(losses, masses, **kwargs)

    @property
    def atoms(self) -> list[LossAtom]:
        return [LossAtom(float(l), float(m)) for l, m in zip(self.losses, self.masses)]

    def __len__(self) -> int:
        return self.losses.size

    @property
    def finite_mass(self) -> float:
        # numpy sums pairwise; error stays near machine precision.
        return float(np.sum(self.masses))

    @property
    def total_mass(self) -> float:
        return self.finite_mass + self.infinity_mass + self.truncated_mass

    @property
    def tail_mass(self) -> float:
        """Mass that always counts towards delta (infinity plus truncation)."""
        return self.infinity_mass + self.truncated_mass


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(pld: DiscretePLD, tolerance: float = MASS_TOLERANCE) -> ValidationReport:
    """Check every structural invariant of ``pld`` and report all violations."""
    problems = []
    bad_loss = np.flatnonzero(~np.isfinite(pld.losses))
    for i in bad_loss:
        problems.append(f"non-finite loss in atoms at index {i}: {pld.losses[i]}")
    bad_mass = np.flatnonzero(~(pld.masses >= 0))
    for i in bad_mass:
        problems.append(f"negative or NaN mass at index {i}: {pld.masses[i]}")
    for name in ("infinity_mass", "truncated_mass"):
        value = getattr(pld, name)
        if not 0.0 <= value <= 1.0:
            problems.append(f"{name} {value!r} outside [0, 1]")
    total = pld.total_mass
    if not abs(total - 1.0) <= tolerance:
        problems.append(f"total mass {total!r}")
    return ValidationReport(tuple(problems))


def coalesce(pld: DiscretePLD, loss_tolerance: float = 0.0) -> DiscretePLD:
    """Merge atoms whose losses form chains with gaps ``<= loss_tolerance``.

    Merged atoms carry the summed mass at the mass-weighted mean loss. With a
    zero tolerance only exactly equal losses merge.
    """
    if loss_tolerance < 0:
        raise ValueError(f"loss_tolerance must be nonnegative, got {loss_tolerance}")
    if len(pld) == 0:
        return pld
    order = np.argsort(pld.losses, kind="stable")
    losses = pld.losses[order]
    masses = pld.masses[order]
    new_group = np.empty(losses.size, dtype=bool)
    new_group[0] = True
    new_group[1:] = np.diff(losses) > loss_tolerance
    group = np.cumsum(new_group) - 1
    n_groups = int(group[-1]) + 1
    if n_groups == losses.size:
        merged_losses, merged_masses = losses, masses
    else:
        merged_masses = np.bincount(group, weights=masses, minlength=n_groups)
        if loss_tolerance == 0:
            merged_losses = losses[new_group]
        else:
            weighted = np.bincount(group, weights=masses * losses, minlength=n_groups)
            counts = np.bincount(group, minlength=n_groups)
            plain = np.bincount(group, weights=losses, minlength=n_groups) / counts
            with np.errstate(invalid="ignore", divide="ignore"):
                merged_losses = np.where(merged_masses > 0, weighted / merged_masses, plain)
            # Keep merged losses inside their group's range against round-off.
            lo = losses[new_group]
            hi = np.maximum.reduceat(losses, np.flatnonzero(new_group))
            merged_losses = np.clip(merged_losses, lo, hi)
    return DiscretePLD(merged_losses, merged_masses, pld.infinity_mass,
                       pld.truncated_mass, pld.direction, dict(pld.meta))


def to_csv(pld: DiscretePLD) -> str:
    """Serialise atoms as ``loss,mass`` rows followed by ledger comment lines."""
    out = io.StringIO()
    out.write("loss,mass\n")
    for loss, mass in zip(pld.losses.tolist(), pld.masses.tolist()):
        out.write(f"{loss:.17g},{mass:.17g}\n")
    out.write(f"# infinity_mass={pld.infinity_mass:.17g}\n")
    out.write(f"# truncated_mass={pld.truncated_mass:.17g}\n")
    return out.getvalue()


def from_csv(text: str, direction: Direction = Direction.NUM_OVER_DEN) -> DiscretePLD:
    losses, masses = [], []
    ledgers = {"infinity_mass": 0.0, "truncated_mass": 0.0}
    lines = text.splitlines()
    if not lines or lines[0].strip() != "loss,mass":
        raise ValueError("missing 'loss,mass' header")
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key in ledgers:
                ledgers[key] = float(value)
            continue
        loss, mass = line.split(",")
        losses.append(float(loss))
        masses.append(float(mass))
    return DiscretePLD(np.array(losses), np.array(masses), direction=direction, **ledgers)
