"""Twisted Fourier representation of curves with ``x(t + T) = Q x(t)``.

A trajectory is stored as amplitudes ``c[j, m + M]`` so that

    x(t) = sum_{j, m} c[j, m] xi_j exp(i omega_{j,m} t),   omega_{j,m} = (theta_j + 2 pi m) / T,

with ``xi_j`` the columns of ``sym.P``. Every basis function satisfies the
boundary condition exactly, and the reality constraint
``c[pairing(j), m'] = conj(c[j, m])`` makes the sum real.
For ``theta_j != 0`` the partner index is ``m' = -m - 1``; the entry ``m = M``
would pair with ``-M - 1`` outside the box and is therefore held at zero.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass

import numpy as np

from .spectral import TWO_PI, SymmetryData, rotation_order


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Layout:
    """Index bookkeeping for the ``(j, m)`` box of one ``(sym, M)`` pair."""

    sym: SymmetryData
    M: int
    m: np.ndarray  # (K,) integer shifts -M..M
    omega: np.ndarray  # (n, K)
    mask: np.ndarray  # (n, K) bool, entries allowed to be nonzero
    partner_j: np.ndarray  # (n, K)
    partner_k: np.ndarray  # (n, K), column index of the partner
    rep: tuple  # (rows, cols) of representative entries
    self_paired: np.ndarray  # (D,) bool, aligned with rep

    @property
    def shape(self) -> tuple[int, int]:
        return self.omega.shape

    @property
    def zero_modes(self) -> np.ndarray:
        return self.mask & (self.omega == 0.0)

    def symmetrize(self, c: np.ndarray) -> np.ndarray:
        c = np.where(self.mask, c, 0.0)
        return 0.5 * (c + c[self.partner_j, self.partner_k].conj())

    @functools.cached_property
    def _packing(self):
        sp = self.self_paired
        width = np.where(sp, 1, 2)
        entry = np.repeat(np.arange(sp.size), width)
        first = np.concatenate(([0], np.cumsum(width)[:-1]))
        is_im = np.zeros(entry.size, dtype=bool)
        is_im[first[~sp] + 1] = True
        scale = np.where(sp, 1.0, math.sqrt(2.0))
        im_idx = np.where(sp, first, first + 1)
        rows, cols = self.rep
        return entry, is_im, scale, first, im_idx, self.partner_j[rows, cols], self.partner_k[rows, cols]

    def pack(self, c: np.ndarray) -> np.ndarray:
        """Isometric real coordinates: ``|pack(c)|^2 == sum |c|^2``.

        Leading axes of ``c`` are treated as a batch.
        """
        entry, is_im, scale, *_ = self._packing
        vals = c[..., self.rep[0], self.rep[1]] * scale
        vals = vals[..., entry]
        return np.where(is_im, vals.imag, vals.real)

    def unpack(self, u: np.ndarray) -> np.ndarray:
        _, _, scale, first, im_idx, pj, pk = self._packing
        sp = self.self_paired
        u = np.asarray(u, dtype=float)
        z = (u[..., first] + 1j * np.where(sp, 0.0, u[..., im_idx])) / scale
        c = np.zeros(u.shape[:-1] + self.shape, dtype=complex)
        c[..., pj, pk] = z.conj()
        c[..., self.rep[0], self.rep[1]] = z
        return c

    @property
    def packed_size(self) -> int:
        """Real dimension of the constrained coefficient space."""
        return int(2 * len(self.self_paired) - np.count_nonzero(self.self_paired))

    def packed_weights(self) -> np.ndarray:
        """``1 + omega^2`` per packed coordinate (H1 metric diagonal)."""
        w = 1.0 + self.omega[self.rep] ** 2
        return np.repeat(w, np.where(self.self_paired, 1, 2))


@functools.lru_cache(maxsize=64)
def layout(sym: SymmetryData, M: int) -> Layout:
    if M < 1:
        raise ValueError(f"truncation order must be positive, got {M}")
    n = sym.n
    m = np.arange(-M, M + 1)
    K = m.size
    omega = (sym.theta[:, None] + TWO_PI * m[None, :]) / sym.T
    partner_j = np.empty((n, K), dtype=int)
    partner_k = np.empty((n, K), dtype=int)
    mask = np.ones((n, K), dtype=bool)
    for j in range(n):
        pj = int(sym.pairing[j])
        for k, mm in enumerate(m):
            pm = -mm if sym.theta[j] == 0.0 else -mm - 1
            partner_j[j, k] = pj
            if -M <= pm <= M:
                partner_k[j, k] = pm + M
            else:
                partner_k[j, k] = k
                mask[j, k] = False
    # an entry is inactive if its partner is
    mask &= mask[partner_j, partner_k]
    rows, cols, selfp = [], [], []
    for j in range(n):
        for k in range(K):
            if not mask[j, k]:
                continue
            pj, pk = partner_j[j, k], partner_k[j, k]
            if (j, k) <= (pj, pk):
                rows.append(j)
                cols.append(k)
                selfp.append((j, k) == (pj, pk))
    return Layout(
        sym=sym,
        M=M,
        m=m,
        omega=omega,
        mask=mask,
        partner_j=partner_j,
        partner_k=partner_k,
        rep=(np.array(rows, dtype=int), np.array(cols, dtype=int)),
        self_paired=np.array(selfp, dtype=bool),
    )


@dataclass(frozen=True, eq=False)
class TrajectoryCoeffs:
    """Truncated twisted Fourier amplitudes of a real trajectory."""

    sym: SymmetryData
    M: int
    c: np.ndarray

    def __post_init__(self):
        if self.c.shape != (self.sym.n, 2 * self.M + 1):
            raise ShapeMismatch(f"coefficient array {self.c.shape} does not match n={self.sym.n}, M={self.M}")
        self.c.setflags(write=False)

    @classmethod
    def from_array(cls, sym: SymmetryData, c, M: int | None = None) -> "TrajectoryCoeffs":
        c = np.asarray(c, dtype=complex)
        if M is None:
            M = (c.shape[1] - 1) // 2
        return cls(sym, M, layout(sym, M).symmetrize(c))

    @classmethod
    def zeros(cls, sym: SymmetryData, M: int) -> "TrajectoryCoeffs":
        return cls(sym, M, np.zeros((sym.n, 2 * M + 1), dtype=complex))

    @classmethod
    def from_packed(cls, sym: SymmetryData, M: int, u) -> "TrajectoryCoeffs":
        return cls(sym, M, layout(sym, M).unpack(np.asarray(u, dtype=float)))

    @property
    def layout(self) -> Layout:
        return layout(self.sym, self.M)

    @property
    def omega(self) -> np.ndarray:
        return self.layout.omega

    def packed(self) -> np.ndarray:
        return self.layout.pack(self.c)

    def with_coeffs(self, c) -> "TrajectoryCoeffs":
        return TrajectoryCoeffs(self.sym, self.M, np.asarray(c, dtype=complex))

    def __add__(self, other: "TrajectoryCoeffs") -> "TrajectoryCoeffs":
        _check_same(self, other)
        return self.with_coeffs(self.c + other.c)

    def __sub__(self, other: "TrajectoryCoeffs") -> "TrajectoryCoeffs":
        _check_same(self, other)
        return self.with_coeffs(self.c - other.c)

    def __mul__(self, k: float) -> "TrajectoryCoeffs":
        return self.with_coeffs(self.c * float(k))

    __rmul__ = __mul__

    def __neg__(self) -> "TrajectoryCoeffs":
        return self.with_coeffs(-self.c)

    def scale(self) -> float:
        """Coefficient scale used for relative tolerances."""
        return float(np.sqrt(np.sum(np.abs(self.c) ** 2)))


def _check_same(a: TrajectoryCoeffs, b: TrajectoryCoeffs) -> None:
    if a.sym is not b.sym or a.M != b.M:
        raise ShapeMismatch("trajectories live on different (sym, M) discretizations")


def evaluate(x: TrajectoryCoeffs, t, imag: bool = False):
    """Position and velocity at times ``t``.

    Returns ``(position, velocity)`` with shape ``(n,)`` for scalar ``t`` and
    ``(len(t), n)`` otherwise. With ``imag=True`` also returns the largest
    imaginary residue of the complex sum (a check on the reality constraint).
    """
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    phase = np.exp(1j * x.omega[None, :, :] * tt[:, None, None])  # (N, n, K)
    y = np.einsum("jk,njk->nj", x.c, phase)
    yd = np.einsum("jk,njk->nj", 1j * x.omega * x.c, phase)
    P = x.sym.P
    pos = y @ P.T
    vel = yd @ P.T
    resid = max(float(np.max(np.abs(pos.imag), initial=0.0)), float(np.max(np.abs(vel.imag), initial=0.0)))
    pos, vel = pos.real, vel.real
    if np.ndim(t) == 0:
        pos, vel = pos[0], vel[0]
    if imag:
        return pos, vel, resid
    return pos, vel


def quadrature_times(sym: SymmetryData, Nq: int) -> np.ndarray:
    return sym.T * np.arange(Nq) / Nq


def synthesize(sym: SymmetryData, M: int, c: np.ndarray, Nq: int) -> np.ndarray:
    """Values on the grid ``t_k = k T / Nq`` of raw amplitude arrays ``c`` (shape ``(..., n, 2M+1)``).

    Returns shape ``(..., Nq, n)``.
    """
    t = quadrature_times(sym, Nq)
    twist = np.exp(1j * np.outer(t, sym.theta) / sym.T)  # (Nq, n)
    idx = np.mod(np.arange(-M, M + 1), Nq)
    buf = np.zeros(c.shape[:-1] + (Nq,), dtype=complex)
    buf[..., idx] = c
    y = np.swapaxes(np.fft.ifft(buf, axis=-1), -1, -2) * Nq * twist
    return (y @ sym.P.T).real


def sample(x: TrajectoryCoeffs, Nq: int, derivatives: int = 1) -> list[np.ndarray]:
    """Values of ``x, x', ...`` on the uniform grid ``t_k = k T / Nq``.

    Uses an FFT per component; requires ``Nq >= 2M + 1``. Returns a list of
    ``derivatives + 1`` arrays of shape ``(Nq, n)``.
    """
    if Nq < 2 * x.M + 1:
        raise ValueError(f"Nq={Nq} cannot resolve M={x.M} (need Nq >= {2 * x.M + 1})")
    out = []
    c = x.c
    for _ in range(derivatives + 1):
        out.append(synthesize(x.sym, x.M, c, Nq))
        c = 1j * x.omega * c
    return out


def twisted_transform(sym: SymmetryData, M: int, g: np.ndarray) -> np.ndarray:
    """Project samples ``g(t_k)`` (shape ``(..., Nq, n)``) onto the twisted basis.

    Returns ``G[j, m] = (1/Nq) sum_k xi_j^H g(t_k) exp(-i omega_{j,m} t_k)``,
    restricted to the active entries of the ``(sym, M)`` box.
    """
    g = np.asarray(g)
    Nq = g.shape[-2]
    t = quadrature_times(sym, Nq)
    twist = np.exp(-1j * np.outer(t, sym.theta) / sym.T)
    proj = (g @ sym.P.conj()) * twist  # xi_j^H g_k
    spec = np.swapaxes(np.fft.fft(proj, axis=-2), -1, -2) / Nq  # (..., n, Nq)
    lay = layout(sym, M)
    G = spec[..., np.mod(lay.m, Nq)]
    return np.where(lay.mask, G, 0.0)


def shift(x: TrajectoryCoeffs, s: float) -> TrajectoryCoeffs:
    """Time-shift action: ``shift(x, s)(t) = x(t + s)``."""
    return x.with_coeffs(x.c * np.exp(1j * x.omega * s))


def mean_part(x: TrajectoryCoeffs) -> np.ndarray:
    """Long-time average of ``x``; lies in ker(I - Q)."""
    zero = x.layout.zero_modes
    y = np.where(zero, x.c, 0.0).sum(axis=1)
    return (x.sym.P @ y).real


def project_hat(x: TrajectoryCoeffs) -> TrajectoryCoeffs:
    """Mean-free part of ``x``."""
    return x.with_coeffs(np.where(x.layout.zero_modes, 0.0, x.c))


def constant(sym: SymmetryData, M: int, v) -> TrajectoryCoeffs:
    """Constant trajectory ``x(t) = v`` for ``v`` in ker(I - Q)."""
    lay = layout(sym, M)
    c = np.zeros(lay.shape, dtype=complex)
    coef = sym.P.conj().T @ np.asarray(v, dtype=float)
    zero = sym.theta == 0.0
    c[zero, M] = coef[zero]
    return TrajectoryCoeffs.from_array(sym, c, M)


def ker_projection(sym: SymmetryData, v) -> np.ndarray:
    """Orthogonal projection of ``v`` onto ker(I - Q)."""
    B = sym.P[:, sym.theta == 0.0]
    return (B @ (B.conj().T @ np.asarray(v, dtype=float))).real


def kernel_basis(sym: SymmetryData) -> np.ndarray:
    """Real orthonormal basis of ker(I - Q) as columns."""
    return sym.P[:, sym.theta == 0.0].real.copy()


def inner_l2(a: TrajectoryCoeffs, b: TrajectoryCoeffs) -> float:
    _check_same(a, b)
    return float(a.sym.T * np.real(np.vdot(a.c, b.c)))


def inner_h1(a: TrajectoryCoeffs, b: TrajectoryCoeffs) -> float:
    _check_same(a, b)
    return float(a.sym.T * np.real(np.sum((1.0 + a.omega**2) * a.c.conj() * b.c)))


def kinetic_l2(x: TrajectoryCoeffs) -> float:
    """``int_0^T |x'|^2 dt``."""
    return float(x.sym.T * np.sum(x.omega**2 * np.abs(x.c) ** 2))


def norm_h1(x: TrajectoryCoeffs) -> float:
    return math.sqrt(max(inner_h1(x, x), 0.0))


def norm_l2(x: TrajectoryCoeffs) -> float:
    return math.sqrt(max(inner_l2(x, x), 0.0))


def tail_energy(x: TrajectoryCoeffs) -> float:
    """Share of H1 energy carried by modes with ``|m| > M/2``."""
    w = (1.0 + x.omega**2) * np.abs(x.c) ** 2
    total = float(w.sum())
    if total == 0.0:
        return 0.0
    tail = np.abs(x.layout.m) > x.M / 2
    return float(w[:, tail].sum() / total)


def shift_window(sym: SymmetryData, components=None, cap: int = 64) -> tuple[float, bool]:
    """Search window for shifts and whether it is an exact period of the action."""
    k = rotation_order(sym, cap=cap, components=components)
    if k is None:
        return cap * sym.T, False
    return k * sym.T, True


@dataclass(frozen=True)
class OrbitDistanceResult:
    distance: float
    s_star: float
    window: float
    exact_window: bool


def orbit_distance(
    a: TrajectoryCoeffs, b: TrajectoryCoeffs, grid: int = 256, cap: int = 64, candidates: int = 16
) -> OrbitDistanceResult:
    """Shift-minimized H1 distance ``min_s ||a - shift(b, s)||``.

    The search covers one period of the shift action when the active
    components have ``Q``-order at most ``cap``, else ``(-cap T, cap T)``; in
    the latter case the result only bounds the true infimum from above. The
    coarse grid has at least ``grid`` points and at least four per period of
    the fastest active mode; the ``candidates`` lowest grid basins are refined
    together by safeguarded Newton steps on the analytic derivatives.
    """
    _check_same(a, b)
    T = a.sym.T
    w = T * (1.0 + a.omega**2)
    scale = max(a.scale(), b.scale(), 1e-300)
    active = (np.abs(a.c) + np.abs(b.c)) > 1e-14 * scale
    comps = np.flatnonzero(active.any(axis=1))
    S, exact = shift_window(a.sym, comps if comps.size else None, cap)
    lo = 0.0 if exact else -S
    span = S - lo
    na = float(np.sum(w * np.abs(a.c) ** 2))
    nb = float(np.sum(w * np.abs(b.c) ** 2))
    cross = (w * a.c.conj() * b.c)[active]
    om = a.omega[active]

    fastest = float(np.max(np.abs(om), initial=0.0))
    points = max(grid, int(math.ceil(4.0 * span * fastest / TWO_PI)))
    s_grid = lo + span * np.arange(points) / points
    vals = na + nb - 2.0 * np.real(np.exp(1j * np.outer(s_grid, om)) @ cross)
    h = span / points
    left, right = np.roll(vals, 1), np.roll(vals, -1)
    if not exact:
        left[0], right[-1] = np.inf, np.inf
    basins = np.flatnonzero((vals <= left) & (vals <= right))
    basins = basins[np.argsort(vals[basins])[:candidates]]
    s_c = s_grid[basins]
    lo_c, hi_c = s_c - h, s_c + h
    for _ in range(30):
        e = cross[None, :] * np.exp(1j * np.outer(s_c, om))
        d1 = 2.0 * np.real(e @ (-1j * om))
        d2 = 2.0 * np.real(e @ (om * om))
        step = np.where(d2 > 0.0, -d1 / np.where(d2 > 0.0, d2, 1.0), -np.sign(d1) * 0.25 * h)
        s_new = np.clip(s_c + step, lo_c, hi_c)
        done = np.max(np.abs(s_new - s_c), initial=0.0) <= 1e-13 * (1.0 + span)
        s_c = s_new
        if done:
            break
    f_c = na + nb - 2.0 * np.real(np.exp(1j * np.outer(s_c, om)) @ cross)
    k = int(np.argmin(f_c))
    s_star = float(s_c[k]) if f_c[k] <= vals[basins[0]] else float(s_grid[basins[0]])
    if exact:
        s_star = float(np.mod(s_star, S))
    dist = norm_h1(a - shift(b, s_star))
    if s_star != 0.0:
        d0 = norm_h1(a - b)
        if d0 <= dist:
            dist, s_star = d0, 0.0
    return OrbitDistanceResult(distance=dist, s_star=s_star, window=S, exact_window=exact)


def random_trajectory(sym: SymmetryData, M: int, seed: int = 0, decay: float = 2.0, scale: float = 1.0) -> TrajectoryCoeffs:
    """Random coefficients with standard deviation ``scale (1 + |m|)^-decay``."""
    rng = np.random.default_rng(seed)
    lay = layout(sym, M)
    sd = scale * (1.0 + np.abs(lay.m)) ** (-decay)
    z = rng.standard_normal(lay.shape) + 1j * rng.standard_normal(lay.shape)
    return TrajectoryCoeffs.from_array(sym, z * sd[None, :], M)


def fit(sym: SymmetryData, M: int, t, positions) -> TrajectoryCoeffs:
    """Least-squares coefficients reproducing sampled positions."""
    t = np.asarray(t, dtype=float)
    X = np.asarray(positions, dtype=float)
    lay = layout(sym, M)
    D = lay.packed_size
    cols = []
    for i in range(D):
        e = np.zeros(D)
        e[i] = 1.0
        pos, _ = evaluate(TrajectoryCoeffs(sym, M, lay.unpack(e)), t)
        cols.append(pos.ravel())
    A = np.column_stack(cols)
    u, *_ = np.linalg.lstsq(A, X.ravel(), rcond=None)
    return TrajectoryCoeffs.from_packed(sym, M, u)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def to_csv(x: TrajectoryCoeffs, path=None, periods: int = 1, samples_per_period: int | None = None) -> str:
    """Write samples ``t, x_1..x_n, v_1..v_n`` on a uniform grid over ``[0, periods T)``."""
    sym = x.sym
    N = samples_per_period or max(4 * x.M + 4, 64)
    t = periods * sym.T * np.arange(periods * N) / (periods * N)
    pos, vel = evaluate(x, t)
    buf = io.StringIO()
    buf.write(f"# torsion/1 n={sym.n} T={_fmt(sym.T)} M={x.M} periods={periods}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(sym.n)] + [f"v{i + 1}" for i in range(sym.n)])
    for k in range(t.size):
        w.writerow([_fmt(t[k])] + [_fmt(v) for v in pos[k]] + [_fmt(v) for v in vel[k]])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def read_csv(path) -> tuple[dict, np.ndarray, np.ndarray, np.ndarray]:
    """Parse a trajectory CSV: returns ``(header, t, positions, velocities)``."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing '# torsion/1' header line")
        header = {}
        for tok in first[1:].split():
            if "=" in tok:
                k, v = tok.split("=", 1)
                header[k] = v
        for key in ("n", "T", "M"):
            if key not in header:
                raise ValueError(f"{path}: header lacks '{key}='")
        n = int(header["n"])
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    if data.ndim != 2 or data.shape[1] != 1 + 2 * n:
        raise ValueError(f"{path}: expected {1 + 2 * n} columns")
    meta = {"n": n, "T": float(header["T"]), "M": int(header["M"])}
    return meta, data[:, 0], data[:, 1 : 1 + n], data[:, 1 + n :]
