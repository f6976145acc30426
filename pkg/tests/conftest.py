import math

import numpy as np
import pytest

from torsion.potential import builtin
from torsion.spectral import rotation_matrix, simultaneous_diagonalize

TWO_PI = 2.0 * math.pi


def brute_force_pT(Q, H, T, mmax=10):
    """Count positive mu - omega^2 with omega != 0 straight from eigen-decompositions.

    Independent of the package: eigenvectors of the normal matrix ``Q + s H``
    (generic ``s``) from ``np.linalg.eig`` lie in joint eigenspaces, so Rayleigh
    quotients give the eigenvalue of Q and of H on each.
    """
    _, V = np.linalg.eig(Q + 0.6180339887 * H)
    count = 0
    for k in range(V.shape[1]):
        v = V[:, k] / np.linalg.norm(V[:, k])
        mu = float(np.real(v.conj() @ H @ v))
        q = v.conj() @ Q @ v
        theta = math.atan2(q.imag, q.real) % TWO_PI
        if abs(theta - TWO_PI) < 1e-12 or abs(theta) < 1e-12:
            theta = 0.0
        for m in range(-mmax, mmax + 1):
            om = (theta + TWO_PI * m) / T
            if om != 0.0 and mu - om * om > 0.0:
                count += 1
    return count


def random_commuting(rng, n):
    """Random orthogonal Q with a commuting symmetric H built block by block."""
    blocks_Q, blocks_H = [], []
    k = 0
    while k < n:
        if n - k >= 2 and rng.random() < 0.6:
            phi = rng.choice([rng.uniform(0.1, 3.0), math.pi / rng.integers(1, 6)])
            blocks_Q.append(rotation_matrix(phi))
            blocks_H.append(rng.uniform(-2, 20) * np.eye(2))
            k += 2
        else:
            blocks_Q.append(np.array([[rng.choice([-1.0, 1.0])]]))
            blocks_H.append(np.array([[rng.uniform(-2, 20)]]))
            k += 1
    Q = np.zeros((n, n))
    H = np.zeros((n, n))
    i = 0
    for bq, bh in zip(blocks_Q, blocks_H):
        d = bq.shape[0]
        Q[i : i + d, i : i + d] = bq
        H[i : i + d, i : i + d] = bh
        i += d
    R, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return R @ Q @ R.T, R @ H @ R.T


@pytest.fixture
def rot_sym():
    """Q = rotation by pi/2, H = 4 I, T = 2 pi."""
    return simultaneous_diagonalize(rotation_matrix(math.pi / 2), 4.0 * np.eye(2), TWO_PI)


@pytest.fixture
def aperiodic_sym():
    """Q = rotation by 1 rad (infinite order), H = 4 I, T = 2 pi."""
    return simultaneous_diagonalize(rotation_matrix(1.0), 4.0 * np.eye(2), TWO_PI)


@pytest.fixture
def mixed_sym():
    """Q = rot(pi/2) + 1 + (-1) on R^4; H commuting with distinct mu on each block."""
    Q = np.zeros((4, 4))
    Q[:2, :2] = rotation_matrix(math.pi / 2)
    Q[2, 2] = 1.0
    Q[3, 3] = -1.0
    H = np.diag([2.0, 2.0, 3.0, 5.0])
    return simultaneous_diagonalize(Q, H, TWO_PI)


@pytest.fixture
def pseudo4():
    return builtin("pseudo_harmonic", {"a": 4.0}, 2)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
