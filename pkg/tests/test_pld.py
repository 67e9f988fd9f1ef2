import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shuffleacct import DiscretePLD, Direction, LossAtom, coalesce, from_csv, to_csv, validate


def make(losses, masses, **kw):
    return DiscretePLD(np.array(losses, dtype=float), np.array(masses, dtype=float), **kw)


def test_construction_and_views():
    pld = DiscretePLD.from_atoms([(0.5, 0.25), (-0.5, 0.5)], infinity_mass=0.25)
    assert len(pld) == 2
    assert pld.atoms == [LossAtom(0.5, 0.25), LossAtom(-0.5, 0.5)]
    assert pld.total_mass == 1.0
    assert pld.tail_mass == 0.25
    assert not pld.losses.flags.writeable


def test_shape_mismatch():
    with pytest.raises(ValueError, match="differ"):
        make([0.0, 1.0], [1.0])


def test_max_both_not_a_pld_direction():
    with pytest.raises(ValueError):
        make([0.0], [1.0], direction=Direction.MAX_BOTH)


def test_validate_reports_every_problem():
    pld = make([0.0, math.inf, 1.0], [0.5, 0.5, -0.1], infinity_mass=1.5)
    report = validate(pld)
    assert not report
    text = " | ".join(report.violations)
    assert "non-finite loss" in text
    assert "negative" in text
    assert "infinity_mass" in text
    assert "total mass" in text


def test_validate_tolerance():
    assert validate(make([0.0], [1.0 - 5e-10]))
    assert not validate(make([0.0], [1.0 - 5e-9]))


def test_coalesce_exact():
    pld = make([1.0, 0.0, 1.0, 2.0], [0.1, 0.2, 0.3, 0.4], truncated_mass=0.0)
    out = coalesce(pld)
    assert out.losses.tolist() == [0.0, 1.0, 2.0]
    assert out.masses.tolist() == pytest.approx([0.2, 0.4, 0.4])


def test_coalesce_with_tolerance_keeps_mean_inside_group():
    pld = make([0.0, 0.001, 0.002, 1.0], [0.25, 0.25, 0.0, 0.5])
    out = coalesce(pld, 0.0015)
    assert out.losses.tolist() == pytest.approx([0.0005, 1.0])
    assert out.masses.tolist() == pytest.approx([0.5, 0.5])
    with pytest.raises(ValueError):
        coalesce(pld, -1.0)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0, 1)), min_size=1, max_size=40),
       st.floats(0, 0.5))
def test_coalesce_conserves_mass(atoms, tol):
    pld = DiscretePLD.from_atoms(atoms)
    out = coalesce(pld, tol)
    assert out.finite_mass == pytest.approx(pld.finite_mass, rel=1e-12, abs=1e-15)
    assert out.losses.min() >= pld.losses.min()
    assert out.losses.max() <= pld.losses.max()


def test_csv_round_trip():
    pld = make([-0.1, 1 / 3], [0.4, 0.5], infinity_mass=0.07, truncated_mass=0.03)
    back = from_csv(to_csv(pld))
    assert np.array_equal(back.losses, pld.losses)
    assert np.array_equal(back.masses, pld.masses)
    assert (back.infinity_mass, back.truncated_mass) == (pld.infinity_mass, pld.truncated_mass)
    with pytest.raises(ValueError):
        from_csv("a,b\n1,2\n")
