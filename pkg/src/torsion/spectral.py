"""Simultaneous diagonalization of (Q, V_xx(0)) and the linearized spectrum.

Index convention: components ``j`` are 0-based throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

TWO_PI = 2.0 * math.pi

# angle snapping and clustering thresholds
SNAP_TOL = 1e-12
CLUSTER_TOL = 1e-9


class SpectralError(ValueError):
    """Base class for ill-posed (Q, H, T) inputs."""

    def __init__(self, message: str, norm: float = float("nan")):
        super().__init__(message)
        self.norm = norm


class NonOrthogonal(SpectralError):
    pass


class NonSymmetric(SpectralError):
    pass


class NonCommuting(SpectralError):
    pass


class Degenerate(SpectralError):
    pass


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True, eq=False)
class SymmetryData:
    """The symmetry pair (Q, T) together with the joint eigenbasis of Q and H.

    Attributes
    ----------
    Q, H : ndarray
        Real orthogonal symmetry and the Hessian of the potential at 0.
    T : float
        Period in ``x(t + T) = Q x(t)``.
    P : ndarray, complex (n, n)
        Unitary matrix whose columns ``xi_j`` satisfy ``Q xi_j = e^{i theta_j} xi_j``
        and ``H xi_j = mu_j xi_j``.
    theta : ndarray
        Angles in ``[0, 2 pi)``, snapped to exactly 0 or pi when within 1e-12.
    mu : ndarray
        Eigenvalues of H paired with the columns of P.
    pairing : ndarray of int
        Involution with ``P[:, pairing[j]] == conj(P[:, j])``.
    """

    Q: np.ndarray
    H: np.ndarray
    T: float
    P: np.ndarray
    theta: np.ndarray
    mu: np.ndarray
    pairing: np.ndarray

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def zero_angle(self) -> np.ndarray:
        """Boolean mask of components with theta_j == 0."""
        return self.theta == 0.0

    def omega(self, j, m):
        """Frequency ``(theta_j + 2 pi m) / T`` (broadcasts over arrays)."""
        return (np.asarray(self.theta)[j] + TWO_PI * np.asarray(m)) / self.T

    def partner_shift(self, j: int, m: int) -> tuple[int, int]:
        """Index of the mode whose frequency is ``-omega(j, m)``."""
        if self.theta[j] == 0.0:
            return int(self.pairing[j]), -m
        return int(self.pairing[j]), -m - 1

    def residuals(self) -> dict[str, float]:
        """Norms of the defining identities; used by tests and audits."""
        P = self.P
        Pinv = np.linalg.inv(P)
        I = np.eye(self.n)
        return {
            "orthogonality": float(np.linalg.norm(self.Q.T @ self.Q - I)),
            "commutation": float(np.linalg.norm(self.Q @ self.H - self.H @ self.Q)),
            "unitarity": float(np.linalg.norm(P.conj().T @ P - I)),
            "diag_Q": float(np.linalg.norm(Pinv @ self.Q @ P - np.diag(np.exp(1j * self.theta)))),
            "diag_H": float(np.linalg.norm(Pinv @ self.H @ P - np.diag(self.mu))),
            "pairing": float(np.linalg.norm(P[:, self.pairing] - P.conj())),
        }


@dataclass(frozen=True)
class ModeIndex:
    j: int
    m: int
    omega: float


@dataclass(frozen=True)
class SpectralReport:
    lambda_table: tuple[tuple[ModeIndex, float], ...]
    p_T: int
    M0: float
    xplus_modes: tuple[ModeIndex, ...]
    fix_dimension: int
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def bound(self) -> int:
        return self.p_T // 2


def _snap_angle(phi: float) -> float:
    """Wrap to [0, 2 pi) and snap near 0 and near pi."""
    phi = math.fmod(phi, TWO_PI)
    if phi < 0.0:
        phi += TWO_PI
    if phi < SNAP_TOL or TWO_PI - phi < SNAP_TOL:
        return 0.0
    if abs(phi - math.pi) < SNAP_TOL:
        return math.pi
    return phi


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate a column so its first significant entry is real and positive."""
    scale = np.max(np.abs(v))
    k = int(np.argmax(np.abs(v) > 1e-10 * scale))
    return v * (abs(v[k]) / v[k])


def _angle_blocks(Q: np.ndarray) -> list[tuple[float, np.ndarray]]:
    """Eigenpairs of an orthogonal matrix from its real Schur form.

    Returns ``(phi, u)`` with ``phi`` in [0, pi] and ``Q u = e^{i phi} u``; the
    conjugate eigenpairs for ``2 pi - phi`` are implied for ``0 < phi < pi``.
    """
    S, Z = scipy.linalg.schur(Q, output="real")
    n = Q.shape[0]
    out: list[tuple[float, np.ndarray]] = []
    i = 0
    while i < n:
        if i + 1 < n and S[i + 1, i] != 0.0:
            a, b = S[i, i], S[i, i + 1]
            c, d = S[i + 1, i], S[i + 1, i + 1]
            phi = math.atan2(0.5 * (c - b), 0.5 * (a + d))
            z1, z2 = Z[:, i], Z[:, i + 1]
            u = (z1 - 1j * z2) / math.sqrt(2.0)
            if phi < 0.0:
                phi, u = -phi, u.conj()
            snapped = _snap_angle(phi)
            if snapped in (0.0, math.pi):
                out.append((snapped, z1.astype(complex)))
                out.append((snapped, z2.astype(complex)))
            else:
                out.append((phi, u))
            i += 2
        else:
            phi = 0.0 if S[i, i] > 0.0 else math.pi
            out.append((phi, Z[:, i].astype(complex)))
            i += 1
    return out


def _cluster(pairs: list[tuple[float, np.ndarray]]) -> list[tuple[float, np.ndarray]]:
    pairs = sorted(pairs, key=lambda p: p[0])
    groups: list[tuple[float, list[np.ndarray], list[float]]] = []
    for phi, u in pairs:
        if groups and phi - groups[-1][2][-1] < CLUSTER_TOL:
            groups[-1][1].append(u)
            groups[-1][2].append(phi)
        else:
            groups.append((phi, [u], [phi]))
    result = []
    for _, vecs, phis in groups:
        angle = _snap_angle(float(np.mean(phis)))
        result.append((angle, np.column_stack(vecs)))
    return result


def simultaneous_diagonalize(Q, H, T: float) -> SymmetryData:
    """Jointly diagonalize an orthogonal ``Q`` and a symmetric ``H`` commuting with it.

    Raises
    ------
    NonOrthogonal, NonSymmetric, NonCommuting
        With the offending norm attached as ``.norm``.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = Q.shape[0]
    if Q.shape != (n, n) or H.shape != (n, n):
        raise SpectralError(f"shape mismatch: Q {Q.shape}, H {H.shape}")
    if not (T > 0 and math.isfinite(T)):
        raise SpectralError(f"period must be positive, got {T}")
    r = float(np.linalg.norm(Q.T @ Q - np.eye(n)))
    if r > 1e-10:
        raise NonOrthogonal(f"||Q^T Q - I|| = {r:.3e} exceeds 1e-10", r)
    r = float(np.linalg.norm(H - H.T))
    if r > 1e-10:
        raise NonSymmetric(f"||H - H^T|| = {r:.3e} exceeds 1e-10", r)
    r = float(np.linalg.norm(Q @ H - H @ Q))
    if r > 1e-8:
        raise NonCommuting(f"||QH - HQ|| = {r:.3e} exceeds 1e-8", r)
    H = 0.5 * (H + H.T)

    columns: list[tuple[float, float, np.ndarray, int]] = []  # (theta, mu, xi, group key)
    for key, (phi, U) in enumerate(_cluster(_angle_blocks(Q))):
        Hr = U.conj().T @ H @ U
        Hr = 0.5 * (Hr + Hr.conj().T)
        if phi in (0.0, math.pi):
            U = U.real
            mus, W = np.linalg.eigh(Hr.real)
            V = U @ W
            for k in range(V.shape[1]):
                v = V[:, k] / np.linalg.norm(V[:, k])
                columns.append((phi, float(mus[k]), _fix_phase(v).astype(complex), key))
        else:
            mus, W = np.linalg.eigh(Hr)
            V = U @ W
            for k in range(V.shape[1]):
                v = _fix_phase(V[:, k] / np.linalg.norm(V[:, k]))
                columns.append((phi, float(mus[k]), v, key))
                columns.append((TWO_PI - phi, float(mus[k]), v.conj(), -key - 1))

    order = sorted(range(len(columns)), key=lambda i: (columns[i][0], columns[i][1], i))
    theta = np.array([columns[i][0] for i in order])
    mu = np.array([columns[i][1] for i in order])
    P = np.column_stack([columns[i][2] for i in order])

    # pair k-th column of group g with k-th column of group -g-1
    position = {i: pos for pos, i in enumerate(order)}
    pairing = np.arange(n)
    partner_of: dict[int, int] = {}
    for i, (phi, _, _, key) in enumerate(columns):
        if phi not in (0.0, math.pi) and key >= 0:
            partner_of[i] = i + 1  # conjugate column appended right after
    for i, p in partner_of.items():
        pairing[position[i]] = position[p]
        pairing[position[p]] = position[i]

    for arr in (theta, mu, pairing):
        arr.setflags(write=False)
    P.setflags(write=False)
    return SymmetryData(Q=Q, H=H, T=float(T), P=P, theta=theta, mu=mu, pairing=pairing)


def eigenvalue(sym: SymmetryData, j: int, m: int) -> float:
    """Linearized eigenvalue ``mu_j - ((theta_j + 2 pi m) / T)^2``."""
    if not 0 <= j < sym.n:
        raise IndexOutOfRange(f"component {j} outside 0..{sym.n - 1}")
    w = (sym.theta[j] + TWO_PI * m) / sym.T
    return float(sym.mu[j] - w * w)


def enumeration_bound(sym: SymmetryData) -> int:
    """Largest |m| that can carry a positive eigenvalue, plus one."""
    top = max(float(np.max(sym.mu)), 0.0)
    return int(math.ceil(sym.T * math.sqrt(top) / TWO_PI)) + 1


def count_pT(sym: SymmetryData) -> SpectralReport:
    """Count modes with positive linearized eigenvalue and nonzero frequency."""
    mmax = enumeration_bound(sym)
    table = []
    xplus = []
    for j in range(sym.n):
        for m in range(-mmax, mmax + 1):
            w = (sym.theta[j] + TWO_PI * m) / sym.T
            idx = ModeIndex(j, m, float(w))
            lam = float(sym.mu[j] - w * w)
            table.append((idx, lam))
            if lam > 0.0 and w != 0.0:
                xplus.append(idx)
    xplus.sort(key=lambda k: (-eigenvalue(sym, k.j, k.m), k.j, k.m))
    return SpectralReport(
        lambda_table=tuple(table),
        p_T=len(xplus),
        M0=wirtinger_constant(sym),
        xplus_modes=tuple(xplus),
        fix_dimension=int(np.count_nonzero(sym.theta == 0.0)),
    )


def wirtinger_constant(sym: SymmetryData) -> float:
    """Smallest nonzero ``((theta_j + 2 iota pi) / T)^2`` over iota in {-1, 0}."""
    cands = [((th + TWO_PI * iota) / sym.T) ** 2 for th in sym.theta for iota in (-1, 0)]
    cands = [c for c in cands if c != 0.0]
    if not cands:
        raise Degenerate("no nonzero frequency candidates")
    return float(min(cands))


def rotation_order(sym: SymmetryData, cap: int = 64, components=None, tol: float = 1e-9) -> int | None:
    """Smallest k <= cap with ``k theta_j`` a multiple of 2 pi for the given components.

    ``k * T`` is then a period of the time-shift action restricted to those
    components. Returns None when no such k exists up to ``cap``.
    """
    thetas = sym.theta if components is None else sym.theta[np.asarray(components, dtype=int)]
    for k in range(1, cap + 1):
        r = np.mod(k * thetas / TWO_PI, 1.0)
        if np.all(np.minimum(r, 1.0 - r) < tol):
            return k
    return None


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])
