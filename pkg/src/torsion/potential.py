"""Potentials, built-in families, and sampled audits of the hypotheses (V1)-(V7).

Callables act on the last axis: ``value(x)`` maps ``(..., n) -> (...)`` and
``gradient(x)`` maps ``(..., n) -> (..., n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize

from .spectral import SymmetryData
from .trajectory import kernel_basis

PASSED = "passed"
FAILED = "failed"
NOT_APPLICABLE = "not-applicable"
INCONCLUSIVE = "inconclusive"

CONDITIONS = ("V1", "V2", "V3", "V4", "V5", "V6", "V7")


class UnknownFamily(KeyError):
    pass


class BadParameters(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """A potential with its gradient, Hessian at the origin and declared constants.

    ``expected`` records audit statuses the family guarantees for every
    orthogonal ``Q`` commuting with ``hessian0``; conditions absent from it
    depend on ``Q`` or on parameters.
    """

    name: str
    params: dict
    n: int
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian0: np.ndarray
    beta: float | None = None
    alpha: float | None = None
    a1: float | None = None
    a2: float | None = None
    R: float | None = None
    expected: dict = field(default_factory=dict)

    def constants(self) -> dict:
        return {"beta": self.beta, "alpha": self.alpha, "a1": self.a1, "a2": self.a2, "R": self.R}


def _quadratic(n=None, H=None, mu=None, **extra):
    if H is None and mu is None:
        raise BadParameters("quadratic needs 'H' (matrix) or 'mu' (diagonal)")
    if H is None:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if n is not None and mu.size == 1:
            mu = np.full(n, mu[0])
        H = np.diag(mu)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[0] != H.shape[1] or (n is not None and H.shape[0] != n):
        raise BadParameters(f"H has shape {H.shape}, expected ({n}, {n})")
    if np.linalg.norm(H - H.T) > 1e-12 * (1.0 + np.linalg.norm(H)):
        raise BadParameters("H must be symmetric")
    H = H.copy()
    H.setflags(write=False)
    expected = {"V1": PASSED, "V2": PASSED, "V3": PASSED}
    if np.any(H != 0.0):
        expected["V4"] = FAILED
    if np.all(np.linalg.eigvalsh(H) > 0.0):
        expected["V5"] = PASSED
    return PotentialSpec(
        name="quadratic",
        params={"H": H.tolist()},
        n=H.shape[0],
        value=lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, H, x),
        gradient=lambda x: x @ H.T,
        hessian0=H,
        expected=expected,
        **_constants(extra),
    )


def _pseudo_harmonic(n=None, a=None, **extra):
    if n is None or a is None:
        raise BadParameters("pseudo_harmonic needs 'a' and the dimension n")
    a = float(a)
    if not a > 0.0:
        raise BadParameters(f"pseudo_harmonic needs a > 0, got {a}")

    def value(x):
        r2 = np.sum(x * x, axis=-1)
        # a (sqrt(1 + r2) - 1) without cancellation near 0
        return a * r2 / (np.sqrt(1.0 + r2) + 1.0)

    def gradient(x):
        r2 = np.sum(x * x, axis=-1)
        return a * x / np.sqrt(1.0 + r2)[..., None]

    expected = {c: PASSED for c in ("V1", "V2", "V3", "V4", "V5")}
    consts = _constants(extra)
    for c, keys in (("V6", ("beta", "R")), ("V7", ("a1", "a2", "alpha"))):
        if any(consts.get(k) is None for k in keys):
            expected[c] = NOT_APPLICABLE
    return PotentialSpec(
        name="pseudo_harmonic",
        params={"a": a},
        n=int(n),
        value=value,
        gradient=gradient,
        hessian0=a * np.eye(int(n)),
        expected=expected,
        **consts,
    )


def _shifted_power(n=None, a=None, beta=None, R=10.0, alpha=None, a1=None, a2=None):
    if n is None or a is None or beta is None:
        raise BadParameters("shifted_power needs 'a', 'beta' and the dimension n")
    a, beta = float(a), float(beta)
    if not a > 0.0 or not 1.0 < beta < 2.0:
        raise BadParameters(f"shifted_power needs a > 0 and 1 < beta < 2, got a={a}, beta={beta}")
    alpha = 0.5 * (1.0 + beta) if alpha is None else float(alpha)
    a1 = a / beta if a1 is None else float(a1)
    a2 = a / beta if a2 is None else float(a2)
    half = 0.5 * beta

    def value(x):
        r2 = np.sum(x * x, axis=-1)
        return a * np.expm1(half * np.log1p(r2)) / beta

    def gradient(x):
        r2 = np.sum(x * x, axis=-1)
        return a * x * ((1.0 + r2) ** (half - 1.0))[..., None]

    # (x, grad V) - beta V = a (1 - (1 + |x|^2)^(beta/2 - 1)) > 0 for x != 0, so (V6) fails
    expected = {"V1": PASSED, "V2": PASSED, "V3": PASSED, "V4": FAILED, "V5": PASSED, "V6": FAILED, "V7": PASSED}
    return PotentialSpec(
        name="shifted_power",
        params={"a": a, "beta": beta},
        n=int(n),
        value=value,
        gradient=gradient,
        hessian0=a * np.eye(int(n)),
        beta=beta,
        alpha=alpha,
        a1=a1,
        a2=a2,
        R=float(R),
        expected=expected,
    )


def _constants(extra: dict) -> dict:
    allowed = {"beta", "alpha", "a1", "a2", "R"}
    unknown = set(extra) - allowed
    if unknown:
        raise BadParameters(f"unknown parameters: {sorted(unknown)}")
    return {k: (None if v is None else float(v)) for k, v in extra.items()}


FAMILIES: dict[str, Callable[..., PotentialSpec]] = {
    "quadratic": _quadratic,
    "pseudo_harmonic": _pseudo_harmonic,
    "shifted_power": _shifted_power,
}


def register_family(name: str, factory: Callable[..., PotentialSpec]) -> None:
    """Make a user-defined family available to :func:`builtin` and problem files."""
    FAMILIES[name] = factory


def builtin(name: str, params: dict | None = None, n: int | None = None) -> PotentialSpec:
    try:
        factory = FAMILIES[name]
    except KeyError:
        raise UnknownFamily(f"unknown potential family {name!r}; known: {sorted(FAMILIES)}") from None
    params = dict(params or {})
    try:
        return factory(n=n, **params)
    except TypeError as exc:
        raise BadParameters(f"{name}: {exc}") from None


def from_callables(name, n, value, gradient, hessian0, **constants) -> PotentialSpec:
    """Wrap user callables into a PotentialSpec (no expected audit profile)."""
    H = np.atleast_2d(np.asarray(hessian0, dtype=float))
    if H.shape != (n, n):
        raise BadParameters(f"hessian0 has shape {H.shape}, expected ({n}, {n})")
    return PotentialSpec(name=name, params={}, n=n, value=value, gradient=gradient, hessian0=H, **_constants(constants))


def gradient_check(p: PotentialSpec, count: int = 100, seed: int = 0, radius: float = 3.0) -> float:
    """Largest relative error between ``gradient`` and central differences of ``value``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        x = rng.standard_normal(p.n) * radius
        h = 1e-5 * (1.0 + np.linalg.norm(x))
        fd = np.array([(p.value(x + h * e) - p.value(x - h * e)) / (2 * h) for e in np.eye(p.n)])
        g = p.gradient(x)
        worst = max(worst, float(np.linalg.norm(fd - g) / (1.0 + np.linalg.norm(g))))
    return worst


def fd_hessian(p: PotentialSpec, x=None) -> np.ndarray:
    x = np.zeros(p.n) if x is None else np.asarray(x, dtype=float)
    h = 1e-5 * (1.0 + np.linalg.norm(x))
    cols = [(p.gradient(x + h * e) - p.gradient(x - h * e)) / (2 * h) for e in np.eye(p.n)]
    return np.column_stack(cols)


@dataclass(frozen=True)
class SamplingConfig:
    count: int = 1000
    radii: tuple = (1.0, 10.0, 100.0, 1e3, 1e4)
    seed: int = 0
    coercive_threshold: float = 1.0
    band_samples: int = 10000
    band_factor: float = 100.0
    starts: int = 8
    plateau_ratio: float = 1.05

    def to_json(self) -> dict:
        return {
            "count": self.count,
            "radii": [float(r) for r in self.radii],
            "seed": self.seed,
            "coercive_threshold": self.coercive_threshold,
            "band_samples": self.band_samples,
            "band_factor": self.band_factor,
            "starts": self.starts,
            "plateau_ratio": self.plateau_ratio,
        }


@dataclass
class ConditionResult:
    status: str
    detail: str = ""
    witnesses: list = field(default_factory=list)
    sampled: bool = True

    def to_json(self) -> dict:
        return {"status": self.status, "sampled": self.sampled, "detail": self.detail, "witnesses": self.witnesses}


@dataclass
class AuditReport:
    potential: str
    conditions: dict
    config: SamplingConfig

    def status(self, cond: str) -> str:
        return self.conditions[cond].status

    def to_json(self) -> dict:
        return {
            "potential": self.potential,
            "conditions": {k: dict(self.conditions[k].to_json(), config=self.config.to_json()) for k in CONDITIONS},
        }


def _directions(rng, count: int, n: int) -> np.ndarray:
    d = rng.standard_normal((count, n))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _pt(x) -> list:
    return [float(v) for v in np.atleast_1d(x)]


def _audit_v1(p: PotentialSpec) -> ConditionResult:
    z = np.zeros(p.n)
    v0 = float(p.value(z))
    g0 = float(np.linalg.norm(p.gradient(z)))
    Hfd = fd_hessian(p)
    scale = 1.0 + float(np.linalg.norm(Hfd))
    asym = float(np.linalg.norm(Hfd - Hfd.T))
    mismatch = float(np.linalg.norm(Hfd - p.hessian0))
    detail = f"V(0)={v0:.3e}, |grad V(0)|={g0:.3e}, asym={asym:.3e}, |H_fd - H0|={mismatch:.3e}"
    ok = abs(v0) <= 1e-12 and g0 <= 1e-12 and asym <= 1e-6 * scale and mismatch <= 1e-5 * scale
    if ok:
        return ConditionResult(PASSED, detail)
    return ConditionResult(
        FAILED, detail, [{"x": _pt(z), "V": v0, "grad_norm": g0, "hessian_asymmetry": asym, "hessian_mismatch": mismatch}]
    )


def _audit_v2(p: PotentialSpec, sym: SymmetryData, cfg: SamplingConfig, rng) -> ConditionResult:
    B = kernel_basis(sym)
    if B.shape[1] == 0:
        return ConditionResult(PASSED, "ker(I-Q) = {0}; only critical point is x = 0 with V(0) = 0")

    def f(y):
        x = B @ y
        return float(p.value(x)), B.T @ p.gradient(x)

    def stationarity(y):
        # 0.5 |B^T grad V(B y)|^2 (1 + 1/|y|^2): the origin, always critical, is deflated.
        # Gradient via a central-difference Hessian-vector product.
        x = B @ y
        g = B.T @ p.gradient(x)
        ng = float(np.linalg.norm(g))
        ny2 = float(y @ y)
        if ng == 0.0 or ny2 == 0.0:
            return 0.0, np.zeros_like(y)
        h = 1e-6 * (1.0 + float(np.linalg.norm(x))) / ng
        d = B @ g
        hv = B.T @ (p.gradient(x + h * d) - p.gradient(x - h * d)) / (2.0 * h)
        defl = 1.0 + 1.0 / ny2
        return 0.5 * ng * ng * defl, hv * defl - ng * ng * y / (ny2 * ny2)

    found = [np.zeros(p.n)]
    top = float(max(cfg.radii[:3]))
    plans = [(f, list(cfg.radii[:3])), (stationarity, list(np.geomspace(1e-2 * top, top, max(cfg.starts, 2))))]
    for objective, radii in plans:
        for i in range(cfg.starts):
            y0 = rng.standard_normal(B.shape[1])
            y0 *= radii[i % len(radii)] / np.linalg.norm(y0)
            with np.errstate(all="ignore"):
                res = scipy.optimize.minimize(objective, y0, jac=True, method="L-BFGS-B", options={"gtol": 1e-14, "ftol": 1e-30, "maxiter": 2000})
            x = B @ res.x
            if not np.all(np.isfinite(x)):
                continue
            g = np.linalg.norm(p.gradient(x))
            if g <= 1e-8 * (1.0 + np.linalg.norm(x)) and all(np.linalg.norm(x - z) > 1e-6 * (1.0 + np.linalg.norm(z)) for z in found):
                found.append(x)
    bad = [x for x in found if p.value(x) > 1e-9]
    detail = f"{len(found)} critical points located in ker(I-Q) (descent on V and on |grad V|^2 from {cfg.starts} starts each, plus origin)"
    if bad:
        return ConditionResult(FAILED, detail, [{"x": _pt(x), "V": float(p.value(x))} for x in bad])
    return ConditionResult(PASSED, detail)


def _audit_v3(p: PotentialSpec, sym: SymmetryData, cfg: SamplingConfig, rng) -> ConditionResult:
    bad = []
    worst = 0.0
    for r in cfg.radii:
        X = r * _directions(rng, cfg.count, p.n)
        v = p.value(X)
        dv = np.abs(p.value(X @ sym.Q.T) - v)
        tol = 1e-9 * (1.0 + np.abs(v))
        worst = max(worst, float(np.max(dv / tol)))
        for k in np.flatnonzero(dv > tol)[:3]:
            bad.append({"x": _pt(X[k]), "V(x)": float(v[k]), "V(Qx)": float(v[k] + dv[k])})
    detail = f"max |V(Qx)-V(x)| / (1e-9 (1+|V|)) = {worst:.3e}"
    return ConditionResult(FAILED if bad else PASSED, detail, bad)


def _audit_v4(p: PotentialSpec, cfg: SamplingConfig, rng) -> ConditionResult:
    maxima, points = [], []
    for r in cfg.radii:
        X = r * _directions(rng, cfg.count, p.n)
        g = np.linalg.norm(p.gradient(X), axis=-1)
        k = int(np.argmax(g))
        maxima.append(float(g[k]))
        points.append({"radius": float(r), "x": _pt(X[k]), "grad_norm": float(g[k])})
    ratios = [maxima[i + 1] / maxima[i] if maxima[i] > 0 else math.inf for i in range(len(maxima) - 1)]
    detail = "shell maxima of |grad V|: " + ", ".join(f"{m:.6g}" for m in maxima)
    if not ratios or ratios[-1] < cfg.plateau_ratio:
        return ConditionResult(PASSED, detail)
    if all(q >= cfg.plateau_ratio for q in ratios):
        return ConditionResult(FAILED, detail + " (grows on every shell)", points)
    return ConditionResult(INCONCLUSIVE, detail, points)


def _audit_v5(p: PotentialSpec, sym: SymmetryData, cfg: SamplingConfig, rng) -> ConditionResult:
    B = kernel_basis(sym)
    if B.shape[1] == 0:
        return ConditionResult(PASSED, "ker(I-Q) = {0}; condition is vacuous")
    minima, points = [], []
    for r in cfg.radii:
        X = r * (_directions(rng, cfg.count, B.shape[1]) @ B.T)
        v = p.value(X)
        k = int(np.argmin(v))
        minima.append(float(v[k]))
        points.append({"radius": float(r), "x": _pt(X[k]), "V": float(v[k])})
    increasing = all(b > a for a, b in zip(minima, minima[1:]))
    detail = "sphere minima of V on ker(I-Q): " + ", ".join(f"{m:.6g}" for m in minima)
    if increasing and minima[-1] > cfg.coercive_threshold:
        return ConditionResult(PASSED, detail)
    return ConditionResult(INCONCLUSIVE, detail, points)


def _audit_v6(p: PotentialSpec, cfg: SamplingConfig, rng) -> ConditionResult:
    if p.beta is None or p.R is None:
        return ConditionResult(NOT_APPLICABLE, "no declared beta and R", sampled=False)
    if not 1.0 < p.beta < 2.0:
        return ConditionResult(FAILED, f"declared beta={p.beta} outside (1, 2)", [{"beta": p.beta}], sampled=False)
    lo, hi = math.log(p.R), math.log(p.R * cfg.band_factor)
    r = np.exp(rng.uniform(lo, hi, cfg.band_samples))
    X = r[:, None] * _directions(rng, cfg.band_samples, p.n)
    lhs = np.sum(X * p.gradient(X), axis=-1)
    rhs = p.beta * p.value(X)
    detail = f"{cfg.band_samples} samples on R < |x| < {cfg.band_factor:g} R"
    upper = np.flatnonzero(lhs > rhs)
    strict = np.flatnonzero(lhs <= 1e-12)
    if upper.size or np.any(lhs < -1e-12):
        idx = list(upper[:5]) + list(np.flatnonzero(lhs < -1e-12)[:5])
        wit = [{"x": _pt(X[k]), "x_dot_grad": float(lhs[k]), "beta_V": float(rhs[k])} for k in idx]
        return ConditionResult(FAILED, detail + f"; {upper.size} upper-bound violations", wit)
    if strict.size:
        wit = [{"x": _pt(X[k]), "x_dot_grad": float(lhs[k])} for k in strict[:5]]
        return ConditionResult(INCONCLUSIVE, detail + "; (x, grad V) within 1e-12 of zero", wit)
    return ConditionResult(PASSED, detail)


def _audit_v7(p: PotentialSpec, sym: SymmetryData, cfg: SamplingConfig, rng) -> ConditionResult:
    if p.a1 is None or p.a2 is None or p.alpha is None:
        return ConditionResult(NOT_APPLICABLE, "no declared a1, a2, alpha", sampled=False)
    bad = []
    B = kernel_basis(sym)
    radii = (0.0,) + tuple(cfg.radii)
    for r0, r1 in zip(radii, radii[1:]):
        r = rng.uniform(r0, r1, cfg.count)
        X = r[:, None] * _directions(rng, cfg.count, p.n)
        perp = np.linalg.norm(X @ B, axis=-1)
        v = p.value(X)
        bound = p.a1 * perp**p.alpha - p.a2
        for k in np.flatnonzero(v < bound - 1e-12 * (1.0 + np.abs(bound)))[:3]:
            bad.append({"x": _pt(X[k]), "V": float(v[k]), "bound": float(bound[k])})
    detail = f"V >= {p.a1:g} |x_perp|^{p.alpha:g} - {p.a2:g} sampled on shells up to {cfg.radii[-1]:g}"
    if p.beta is not None and not 1.0 < p.alpha < p.beta:
        detail += f"; declared alpha={p.alpha} not in (1, beta)"
        bad.append({"alpha": p.alpha, "beta": p.beta})
    return ConditionResult(FAILED if bad else PASSED, detail, bad)


def audit_conditions(p: PotentialSpec, sym: SymmetryData, cfg: SamplingConfig | None = None) -> AuditReport:
    """Sample each hypothesis; sampling can refute a condition, never prove it."""
    cfg = cfg or SamplingConfig()
    if p.n != sym.n:
        raise BadParameters(f"potential dimension {p.n} does not match symmetry dimension {sym.n}")
    rng = np.random.default_rng(cfg.seed)
    conds = {
        "V1": _audit_v1(p),
        "V2": _audit_v2(p, sym, cfg, rng),
        "V3": _audit_v3(p, sym, cfg, rng),
        "V4": _audit_v4(p, cfg, rng),
        "V5": _audit_v5(p, sym, cfg, rng),
        "V6": _audit_v6(p, cfg, rng),
        "V7": _audit_v7(p, sym, cfg, rng),
    }
    conds["V1"].sampled = False
    return AuditReport(potential=p.name, conditions=conds, config=cfg)
