import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TWO_PI
from torsion.spectral import rotation_matrix, simultaneous_diagonalize
from torsion.trajectory import (
    ShapeMismatch,
    TrajectoryCoeffs,
    constant,
    evaluate,
    fit,
    inner_h1,
    kinetic_l2,
    mean_part,
    norm_h1,
    norm_l2,
    orbit_distance,
    project_hat,
    random_trajectory,
    read_csv,
    sample,
    shift,
    tail_energy,
    to_csv,
    twisted_transform,
)


@pytest.fixture(params=["rot", "aperiodic", "mixed"])
def any_sym(request, rot_sym, aperiodic_sym, mixed_sym):
    return {"rot": rot_sym, "aperiodic": aperiodic_sym, "mixed": mixed_sym}[request.param]


def test_boundary_condition_exact(any_sym):
    x = random_trajectory(any_sym, 8, seed=3)
    t = np.linspace(0, 5, 17)
    a, _ = evaluate(x, t + any_sym.T)
    b, _ = evaluate(x, t)
    assert np.abs(a - b @ any_sym.Q.T).max() <= 1e-12 * max(1.0, x.scale())


def test_real_valued(any_sym):
    x = random_trajectory(any_sym, 6, seed=1)
    _, _, imag = evaluate(x, np.linspace(0, 3, 11), imag=True)
    assert imag < 1e-13


def test_single_mode_is_circle(rot_sym):
    # x = 2 Re(c xi e^{i t/4}) with |xi_1| = |xi_2| = 1/sqrt(2): radius sqrt(2)|c|
    M = 4
    c = np.zeros((2, 2 * M + 1), dtype=complex)
    j = int(np.argmin(rot_sym.theta))
    c[j, M] = 0.5
    x = TrajectoryCoeffs.from_array(rot_sym, c, M)
    assert abs(x.c[j, M]) == pytest.approx(0.25)
    pos, vel = evaluate(x, np.linspace(0, 7, 50))
    assert np.linalg.norm(pos, axis=1) == pytest.approx(np.full(50, math.sqrt(2) * 0.25), abs=1e-14)
    assert np.linalg.norm(vel, axis=1) == pytest.approx(0.25 * np.linalg.norm(pos, axis=1), abs=1e-14)


def test_shift_acts_as_time_translation(any_sym):
    x = random_trajectory(any_sym, 5, seed=2)
    t = np.linspace(0, 4, 9)
    a, _ = evaluate(shift(x, 0.37), t)
    b, _ = evaluate(x, t + 0.37)
    assert np.abs(a - b).max() < 1e-13


def test_shift_group_law(any_sym):
    x = random_trajectory(any_sym, 5, seed=4)
    a = shift(shift(x, 0.3), 1.1)
    b = shift(x, 1.4)
    assert np.abs(a.c - b.c).max() < 1e-14
    assert norm_h1(shift(x, 2.3)) == pytest.approx(norm_h1(x), rel=1e-13)


def test_pack_roundtrip_isometric(any_sym):
    x = random_trajectory(any_sym, 6, seed=5)
    u = x.packed()
    assert np.linalg.norm(u) ** 2 == pytest.approx(np.sum(np.abs(x.c) ** 2), rel=1e-13)
    assert np.abs(TrajectoryCoeffs.from_packed(any_sym, 6, u).c - x.c).max() < 1e-15
    lay = x.layout
    U = np.random.default_rng(0).standard_normal((3, lay.packed_size))
    assert np.abs(lay.pack(lay.unpack(U)) - U).max() < 1e-14


def test_sample_matches_evaluate(any_sym):
    x = random_trajectory(any_sym, 6, seed=6)
    Nq = 40
    pos, vel, acc = sample(x, Nq, derivatives=2)
    t = any_sym.T * np.arange(Nq) / Nq
    p2, v2 = evaluate(x, t)
    assert np.abs(pos - p2).max() < 1e-13
    assert np.abs(vel - v2).max() < 1e-13
    h = 1e-4
    pp, _ = evaluate(x, t + h)
    pm, _ = evaluate(x, t - h)
    assert np.abs(acc - (pp - 2 * pos + pm) / h**2).max() < 1e-5


def test_transform_inverts_sampling(any_sym):
    x = random_trajectory(any_sym, 6, seed=7)
    (pos,) = sample(x, 32, derivatives=0)
    assert np.abs(twisted_transform(any_sym, 6, pos) - x.c).max() < 1e-14


def test_sample_requires_enough_points(rot_sym):
    x = random_trajectory(rot_sym, 6)
    with pytest.raises(ValueError):
        sample(x, 12)


def test_kinetic_matches_quadrature(any_sym):
    x = random_trajectory(any_sym, 6, seed=8)
    _, vel = sample(x, 64)
    assert kinetic_l2(x) == pytest.approx(any_sym.T * np.mean(np.sum(vel**2, axis=1)), rel=1e-12)


def test_l2_norm_matches_quadrature(any_sym):
    x = random_trajectory(any_sym, 6, seed=9)
    (pos,) = sample(x, 64, derivatives=0)
    assert norm_l2(x) ** 2 == pytest.approx(any_sym.T * np.mean(np.sum(pos**2, axis=1)), rel=1e-12)


def test_mean_part_and_constants(mixed_sym):
    x = random_trajectory(mixed_sym, 5, seed=10)
    m = mean_part(x)
    # only the theta = 0 coordinate (index 2) carries a mean
    assert abs(m[0]) < 1e-15 and abs(m[1]) < 1e-15 and abs(m[3]) < 1e-15
    assert np.abs(mean_part(project_hat(x))).max() < 1e-15
    k = constant(mixed_sym, 5, [0, 0, 1.5, 0])
    pos, vel = evaluate(k, np.linspace(0, 3, 5))
    assert np.abs(pos - [0, 0, 1.5, 0]).max() < 1e-15
    assert np.abs(vel).max() < 1e-15


def test_mismatched_discretizations(rot_sym):
    with pytest.raises(ShapeMismatch):
        random_trajectory(rot_sym, 4) + random_trajectory(rot_sym, 5)
    with pytest.raises(ShapeMismatch):
        TrajectoryCoeffs(rot_sym, 3, np.zeros((2, 5), dtype=complex))


def test_coefficients_read_only(rot_sym):
    x = random_trajectory(rot_sym, 3)
    with pytest.raises(ValueError):
        x.c[0, 0] = 1.0


def test_orbit_distance_ignores_shift(any_sym):
    x = random_trajectory(any_sym, 5, seed=11)
    for s in (0.0, 0.9, 3.3):
        r = orbit_distance(x, shift(x, s))
        assert r.distance < 1e-6 * norm_h1(x)


def test_orbit_distance_separates(rot_sym):
    a = random_trajectory(rot_sym, 5, seed=12)
    b = random_trajectory(rot_sym, 5, seed=13)
    r = orbit_distance(a, b)
    assert r.exact_window and r.window == pytest.approx(4 * TWO_PI)
    s = np.linspace(0, r.window, 2000)
    brute = min(norm_h1(a - shift(b, v)) for v in s)
    assert r.distance <= brute + 1e-9
    assert r.distance == pytest.approx(norm_h1(a - shift(b, r.s_star)), rel=1e-12)


def test_orbit_distance_symmetric(rot_sym):
    a = random_trajectory(rot_sym, 5, seed=14)
    b = random_trajectory(rot_sym, 5, seed=15)
    assert orbit_distance(a, b).distance == pytest.approx(orbit_distance(b, a).distance, rel=1e-9)


def test_aperiodic_window_flagged(aperiodic_sym):
    a = random_trajectory(aperiodic_sym, 3, seed=1)
    r = orbit_distance(a, a)
    assert not r.exact_window
    assert r.distance < 1e-9


def test_tail_energy(rot_sym):
    x = random_trajectory(rot_sym, 8, seed=1, decay=8.0)
    assert tail_energy(x) < 1e-6
    assert tail_energy(TrajectoryCoeffs.zeros(rot_sym, 8)) == 0.0


def test_csv_roundtrip(tmp_path, mixed_sym):
    x = random_trajectory(mixed_sym, 5, seed=16)
    path = tmp_path / "x.csv"
    to_csv(x, path)
    meta, t, pos, vel = read_csv(path)
    assert meta == {"n": 4, "T": mixed_sym.T, "M": 5}
    y = fit(mixed_sym, 5, t, pos)
    assert np.abs(y.c - x.c).max() < 1e-13
    p2, v2 = evaluate(x, t)
    assert np.abs(vel - v2).max() < 1e-13


def test_csv_header(rot_sym):
    text = to_csv(random_trajectory(rot_sym, 2), samples_per_period=8)
    lines = text.splitlines()
    assert lines[0].startswith("# torsion/1 n=2 T=6.2831853071795862 M=2")
    assert lines[1] == "t,x1,x2,v1,v2"
    assert len(lines) == 10


def test_read_csv_rejects_headerless(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,x1\n0,1\n")
    with pytest.raises(ValueError):
        read_csv(p)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), phi=st.floats(0.05, 6.2), T=st.floats(0.3, 10.0), s=st.floats(-20, 20))
def test_property_bc_and_shift_isometry(seed, phi, T, s):
    sym = simultaneous_diagonalize(rotation_matrix(phi), np.eye(2), T)
    x = random_trajectory(sym, 4, seed=seed)
    t = np.array([0.0, 0.3 * T, 1.7 * T])
    a, _ = evaluate(x, t + T)
    b, _ = evaluate(x, t)
    assert np.abs(a - b @ sym.Q.T).max() <= 1e-11 * max(1.0, x.scale())
    y = shift(x, s)
    assert inner_h1(y, y) == pytest.approx(inner_h1(x, x), rel=1e-12)
