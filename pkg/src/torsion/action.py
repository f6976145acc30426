"""The action functional, its gradient, the Euler-Lagrange residual and shift averaging."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .potential import PotentialSpec
from .trajectory import (
    TrajectoryCoeffs,
    kinetic_l2,
    norm_h1,
    norm_l2,
    sample,
    shift,
    shift_window,
    twisted_transform,
)


class QuadratureTooCoarse(UserWarning):
    pass


@dataclass(frozen=True)
class ActionValue:
    total: float
    kinetic: float
    potential_integral: float
    quadrature_points: int


@dataclass(frozen=True)
class GradientVector:
    """A coefficient-space vector tagged with the metric that produced it."""

    coeffs: TrajectoryCoeffs
    metric: str

    def norm(self) -> float:
        """Norm in the tagged metric (the dual norm of E' either way)."""
        return norm_h1(self.coeffs) if self.metric == "H1" else norm_l2(self.coeffs)


@dataclass(frozen=True)
class Residual:
    F: GradientVector
    residual_l2: float
    collocation: float
    max_force: float


def default_nq(M: int) -> int:
    return 4 * M + 4


def _check_nq(x: TrajectoryCoeffs, Nq: int | None) -> int:
    Nq = default_nq(x.M) if Nq is None else int(Nq)
    if Nq < 2 * x.M + 1:
        raise ValueError(f"Nq={Nq} cannot resolve M={x.M}")
    if Nq < 4 * x.M + 4:
        warnings.warn(f"Nq={Nq} below anti-aliasing guideline 4M+4={4 * x.M + 4}", QuadratureTooCoarse, stacklevel=3)
    return Nq


def action(x: TrajectoryCoeffs, p: PotentialSpec, Nq: int | None = None) -> ActionValue:
    """``E(x) = int_0^T (|x'|^2 / 2 - V(x)) dt``; kinetic part exact, potential by trapezoid rule."""
    Nq = _check_nq(x, Nq)
    (pos,) = sample(x, Nq, derivatives=0)
    kin = 0.5 * kinetic_l2(x)
    pot = x.sym.T * float(np.mean(p.value(pos)))
    return ActionValue(total=kin - pot, kinetic=kin, potential_integral=pot, quadrature_points=Nq)


def gradient(x: TrajectoryCoeffs, p: PotentialSpec, Nq: int | None = None, metric: str = "H1") -> GradientVector:
    """Representation of ``E'(x)`` in the L2 or H1 inner product.

    With ``F = omega^2 c - G`` where ``G`` is the twisted transform of
    ``grad V(x(t_k))``, ``inner_l2(F, h) = dE(x; h)``; the H1 representative is
    ``F / (1 + omega^2)``.
    """
    Nq = _check_nq(x, Nq)
    (pos,) = sample(x, Nq, derivatives=0)
    G = twisted_transform(x.sym, x.M, p.gradient(pos))
    F = x.omega**2 * x.c - G
    if metric == "L2":
        return GradientVector(x.with_coeffs(F), "L2")
    if metric == "H1":
        return GradientVector(x.with_coeffs(F / (1.0 + x.omega**2)), "H1")
    raise ValueError(f"unknown metric {metric!r}")


def residual(x: TrajectoryCoeffs, p: PotentialSpec, Nq: int | None = None) -> Residual:
    """Galerkin residual of ``x'' + grad V(x) = 0`` and its collocation counterpart."""
    Nq = _check_nq(x, Nq)
    pos, _, acc = sample(x, Nq, derivatives=2)
    g = p.gradient(pos)
    G = twisted_transform(x.sym, x.M, g)
    F = x.with_coeffs(x.omega**2 * x.c - G)
    colloc = float(np.max(np.linalg.norm(acc + g, axis=-1)))
    fmax = float(np.max(np.linalg.norm(g, axis=-1)))
    return Residual(F=GradientVector(F, "L2"), residual_l2=norm_l2(F), collocation=colloc, max_force=fmax)


def van_der_corput(count: int, base: int = 2) -> np.ndarray:
    out = np.zeros(count)
    for k in range(count):
        q, denom, v = k, 1.0, 0.0
        while q:
            denom *= base
            q, r = divmod(q, base)
            v += r / denom
        out[k] = v
    return out


def averaging_rule(sym, Ns: int, cap: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Shifts and weights approximating the long-time mean over the shift group.

    When ``Q`` has finite order ``k <= cap`` the group is periodic with period
    ``k T``; van der Corput points on that window are used with equal weights
    (equispaced for ``Ns`` a power of two). Otherwise a smoothly weighted
    average along ``s_k = k h`` with ``h / T`` the golden ratio conjugate is
    used, which converges much faster than the plain mean for quasi-periodic
    integrands.
    """
    if Ns < 1:
        raise ValueError("Ns must be at least 1")
    S, periodic = shift_window(sym, None, cap)
    if periodic:
        return S * van_der_corput(Ns), np.full(Ns, 1.0 / Ns)
    h = sym.T * (math.sqrt(5.0) - 1.0) / 2.0
    u = (np.arange(Ns) + 1.0) / (Ns + 1.0)
    w = np.exp(-1.0 / (u * (1.0 - u)))
    return h * np.arange(Ns), w / w.sum()


def shift_average(
    w: Callable[[TrajectoryCoeffs], GradientVector | TrajectoryCoeffs],
    x: TrajectoryCoeffs,
    Ns: int = 64,
    shifts=None,
    cap: int = 64,
) -> GradientVector:
    """Finite-sample version of ``v(x) = mean_s shift(w(shift(x, s)), -s)``.

    ``shifts`` overrides the sampling rule with explicit equally weighted shifts.
    """
    if shifts is not None:
        s = np.asarray(shifts, dtype=float)
        weights = np.full(s.size, 1.0 / s.size)
    else:
        s, weights = averaging_rule(x.sym, Ns, cap)
    acc = np.zeros_like(x.c)
    metric = "H1"
    for sk, wk in zip(s, weights):
        out = w(shift(x, sk))
        if isinstance(out, GradientVector):
            metric = out.metric
            out = out.coeffs
        acc = acc + wk * shift(out, -sk).c
    return GradientVector(x.with_coeffs(acc), metric)


def equivariance_defect(w, x: TrajectoryCoeffs, tau: float, Ns: int, cap: int = 64) -> float:
    """``||v(shift(x, tau)) - shift(v(x), tau)||_H1`` for the averaged field ``v``."""
    a = shift_average(w, shift(x, tau), Ns, cap=cap).coeffs
    b = shift(shift_average(w, x, Ns, cap=cap).coeffs, tau)
    return norm_h1(a - b)
