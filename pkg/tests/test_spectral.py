import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TWO_PI, brute_force_pT, random_commuting
from torsion.spectral import (
    IndexOutOfRange,
    NonCommuting,
    NonOrthogonal,
    NonSymmetric,
    count_pT,
    eigenvalue,
    rotation_matrix,
    rotation_order,
    simultaneous_diagonalize,
    wirtinger_constant,
)


def test_identity_scalar_counts():
    sym = simultaneous_diagonalize(np.eye(1), 5.0 * np.eye(1), TWO_PI)
    rep = count_pT(sym)
    # omega = m, lambda = 5 - m^2 > 0 for m = +-1, +-2
    assert rep.p_T == 4
    assert rep.bound == 2
    assert rep.M0 == pytest.approx(1.0, abs=1e-15)
    assert rep.fix_dimension == 1
    assert sorted(abs(k.m) for k in rep.xplus_modes) == [1, 1, 2, 2]


def test_rotation_quarter_turn():
    sym = simultaneous_diagonalize(rotation_matrix(math.pi / 2), np.eye(2), TWO_PI)
    assert sorted(sym.theta) == pytest.approx([math.pi / 2, 3 * math.pi / 2], abs=1e-14)
    rep = count_pT(sym)
    assert rep.p_T == 4
    assert rep.M0 == pytest.approx(1.0 / 16.0, abs=1e-15)
    assert rep.fix_dimension == 0
    assert list(sym.pairing) == [1, 0]


def test_negative_hessian_gives_nothing():
    sym = simultaneous_diagonalize(np.eye(1), -np.eye(1), TWO_PI)
    assert count_pT(sym).p_T == 0


def test_antiperiodic_angle_snaps_to_pi():
    sym = simultaneous_diagonalize(-np.eye(1), 2.0 * np.eye(1), 1.0)
    assert sym.theta[0] == math.pi
    assert list(sym.pairing) == [0]
    # omega = pi (2m + 1) all exceed sqrt(2)
    assert count_pT(sym).p_T == 0


def test_pseudo_harmonic_rotation_count(rot_sym):
    rep = count_pT(rot_sym)
    assert rep.p_T == 8
    assert sorted(abs(k.omega) for k in rep.xplus_modes) == pytest.approx([0.25, 0.25, 0.75, 0.75, 1.25, 1.25, 1.75, 1.75])


def test_xplus_sorted_by_eigenvalue(rot_sym):
    lams = [eigenvalue(rot_sym, k.j, k.m) for k in count_pT(rot_sym).xplus_modes]
    assert lams == sorted(lams, reverse=True)


def test_residuals_small(mixed_sym):
    r = mixed_sym.residuals()
    assert max(r.values()) < 1e-12


def test_mixed_blocks(mixed_sym):
    rep = count_pT(mixed_sym)
    assert rep.p_T == brute_force_pT(mixed_sym.Q, mixed_sym.H, mixed_sym.T)
    assert rep.fix_dimension == 1
    assert rep.p_T % 2 == 0


def test_validation_errors():
    with pytest.raises(NonOrthogonal):
        simultaneous_diagonalize(np.array([[2.0]]), np.eye(1), 1.0)
    with pytest.raises(NonSymmetric):
        simultaneous_diagonalize(np.eye(2), np.array([[1.0, 2.0], [0.0, 1.0]]), 1.0)
    with pytest.raises(NonCommuting):
        simultaneous_diagonalize(rotation_matrix(0.3), np.diag([1.0, 2.0]), 1.0)
    with pytest.raises(ValueError):
        simultaneous_diagonalize(np.eye(1), np.eye(1), 0.0)


def test_eigenvalue_index_checked(rot_sym):
    with pytest.raises(IndexOutOfRange):
        eigenvalue(rot_sym, 5, 0)


def test_wirtinger_constant_identity():
    sym = simultaneous_diagonalize(np.eye(3), np.eye(3), 3.0)
    assert wirtinger_constant(sym) == pytest.approx((TWO_PI / 3.0) ** 2, rel=1e-15)


def test_rotation_order():
    sym = simultaneous_diagonalize(rotation_matrix(2 * math.pi / 5), np.eye(2), 1.0)
    assert rotation_order(sym) == 5
    sym = simultaneous_diagonalize(rotation_matrix(1.0), np.eye(2), 1.0)
    assert rotation_order(sym) is None


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5))
def test_pT_even_and_matches_enumeration(seed, n):
    rng = np.random.default_rng(seed)
    Q, H = random_commuting(rng, n)
    T = float(rng.uniform(0.5, 8.0))
    sym = simultaneous_diagonalize(Q, H, T)
    rep = count_pT(sym)
    assert rep.p_T % 2 == 0
    mmax = int(T * math.sqrt(20) / TWO_PI) + 3
    assert rep.p_T == brute_force_pT(Q, H, T, mmax=mmax)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5))
def test_diagonalization_identities(seed, n):
    rng = np.random.default_rng(seed)
    Q, H = random_commuting(rng, n)
    sym = simultaneous_diagonalize(Q, H, 2.0)
    assert max(sym.residuals().values()) < 1e-9
    gap = np.mod(sym.theta[sym.pairing] + sym.theta, TWO_PI)
    assert np.all(np.minimum(gap, TWO_PI - gap) < 1e-9)
