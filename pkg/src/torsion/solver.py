"""Multiple critical points of the action: seeding, deflated Levenberg-Marquardt, deformation flow."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.integrate

from .action import action, default_nq, gradient, residual
from .potential import PotentialSpec
from .spectral import SpectralReport, SymmetryData, count_pT
from .trajectory import (
    TrajectoryCoeffs,
    layout,
    norm_h1,
    orbit_distance,
    project_hat,
    random_trajectory,
    sample,
    shift,
    synthesize,
    tail_energy,
    twisted_transform,
)

log = logging.getLogger(__name__)


class RefineFailure(RuntimeError):
    def __init__(self, message: str, iterations: int, residual_l2: float):
        super().__init__(message)
        self.iterations = iterations
        self.residual_l2 = residual_l2


class Diverged(RefineFailure):
    pass


class Stagnated(RefineFailure):
    pass


class StepSizeUnderflow(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for :func:`solve_multiplicity`.

    ``rho`` is the H1 radius of the seeding sphere. ``dedup_tol`` defaults to
    ``1e-4 * rho``. ``round_size`` seeds are refined against the same frozen
    deflation set before their results are merged.
    """

    rho: float = 1.0
    M: int = 32
    Nq: int | None = None
    starts: int = 16
    max_iters: int = 100
    residual_tol: float = 1e-8
    dedup_tol: float | None = None
    deflation_shift: float = 1e-3
    deflation_power: float = 2.0
    phase_fix: bool = False
    seed: int = 0
    noise: float = 1e-3
    warmup: bool = False
    warmup_epsilon: float = 1e-2
    round_size: int = 1
    workers: int = 1
    orbit_grid: int = 256
    window_cap: int = 64

    def __post_init__(self):
        for name in ("rho", "residual_tol", "deflation_shift", "deflation_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.dedup_tol is not None and not self.dedup_tol > 0:
            raise ValueError("dedup_tol must be positive")
        if self.M < 1 or self.starts < 0 or self.max_iters < 1 or self.round_size < 1:
            raise ValueError("M, max_iters and round_size must be positive and starts non-negative")

    @property
    def quad(self) -> int:
        return default_nq(self.M) if self.Nq is None else self.Nq

    @property
    def dedup(self) -> float:
        return 1e-4 * self.rho if self.dedup_tol is None else self.dedup_tol


@dataclass
class SolutionRecord:
    coeffs: TrajectoryCoeffs
    action_value: float
    residual_l2: float
    collocation_residual: float
    max_force: float
    is_fixed_point: bool
    start_index: int = -1
    iterations: int = 0
    orbit_id: int = -1
    radius_estimate: float = 0.0
    radius_spread: float = 0.0
    tail_energy: float = 0.0


@dataclass
class MultiplicityReport:
    p_T: int
    bound: int
    found_orbits: int
    verdict: str
    records: list
    orbit_distances: np.ndarray
    ambiguous_pairs: list
    tail_energy: float
    critical_values: list
    failures: list = field(default_factory=list)
    spectral: SpectralReport | None = None

    @property
    def orbits(self) -> list:
        """One representative record per counted (non-fixed) orbit."""
        seen, out = set(), []
        for r in self.records:
            if not r.is_fixed_point and r.orbit_id not in seen:
                seen.add(r.orbit_id)
                out.append(r)
        return out


def mode_pairs(sym: SymmetryData, report: SpectralReport) -> list[tuple[int, int]]:
    """Distinct real mode pairs of X+, as representative ``(j, m)``."""
    seen, pairs = set(), []
    for idx in report.xplus_modes:
        key = (idx.j, idx.m)
        if key in seen:
            continue
        partner = sym.partner_shift(idx.j, idx.m)
        seen.update({key, partner})
        pairs.append(min(key, partner))
    return pairs


def _mode_vector(sym: SymmetryData, M: int, j: int, m: int, phase: float) -> np.ndarray:
    c = np.zeros((sym.n, 2 * M + 1), dtype=complex)
    pj, pm = sym.partner_shift(j, m)
    z = np.exp(1j * phase)
    c[j, m + M] += z
    c[pj, pm + M] += np.conj(z)
    return c


def _to_norm(x: TrajectoryCoeffs, rho: float) -> TrajectoryCoeffs:
    nx = norm_h1(x)
    return x if nx == 0.0 else x * (rho / nx)


def seed_starts(report: SpectralReport, cfg: SolverConfig, sym: SymmetryData) -> list[TrajectoryCoeffs]:
    """Starting points on the H1 sphere of radius ``rho``.

    Single X+ mode pairs first (two phases each), then random two-pair
    mixtures; each gets broadband mean-free noise of relative size ``noise``.
    Without X+ modes, random mean-free seeds are used.
    """
    rng = np.random.default_rng(cfg.seed)
    M = cfg.M
    pairs = [(j, m) for j, m in mode_pairs(sym, report) if -M <= m <= M and layout(sym, M).mask[j, m + M]]
    seeds = []
    for i in range(cfg.starts):
        if not pairs:
            base = project_hat(random_trajectory(sym, M, seed=int(rng.integers(2**31)), decay=2.0))
        elif i < 2 * len(pairs):
            j, m = pairs[i % len(pairs)]
            phase = 0.0 if i < len(pairs) else 0.5 * math.pi
            base = TrajectoryCoeffs.from_array(sym, _mode_vector(sym, M, j, m, phase), M)
        else:
            a, b = rng.choice(len(pairs), size=2, replace=len(pairs) < 2)
            ta, tb = rng.uniform(0.0, 2 * math.pi, size=2)
            wa = rng.uniform(0.2, 0.8)
            ca = _mode_vector(sym, M, *pairs[a], ta)
            cb = _mode_vector(sym, M, *pairs[b], tb)
            base = _to_norm(TrajectoryCoeffs.from_array(sym, ca, M), math.sqrt(wa)) + _to_norm(
                TrajectoryCoeffs.from_array(sym, cb, M), math.sqrt(1.0 - wa)
            )
        base = _to_norm(base, 1.0)
        if cfg.noise > 0 and pairs:
            noise = project_hat(random_trajectory(sym, M, seed=int(rng.integers(2**31)), decay=2.0))
            base = base + _to_norm(noise, cfg.noise)
        seeds.append(_to_norm(base, cfg.rho))
    return seeds


def is_fixed_point(x: TrajectoryCoeffs) -> bool:
    """True when only zero-frequency amplitudes are present (a constant in ker(I - Q))."""
    moving = np.abs(np.where(x.layout.zero_modes, 0.0, x.c))
    return bool(np.all(moving <= 1e-10 * max(x.scale(), 1.0)))


def make_record(x: TrajectoryCoeffs, p: PotentialSpec, Nq: int, start: int = -1, iterations: int = 0) -> SolutionRecord:
    res = residual(x, p, Nq)
    (pos,) = sample(x, Nq, derivatives=0)
    r = np.linalg.norm(pos, axis=-1)
    mean_r = float(np.mean(r))
    return SolutionRecord(
        coeffs=x,
        action_value=action(x, p, Nq).total,
        residual_l2=res.residual_l2,
        collocation_residual=res.collocation,
        max_force=res.max_force,
        is_fixed_point=is_fixed_point(x),
        start_index=start,
        iterations=iterations,
        radius_estimate=mean_r,
        radius_spread=float(np.max(r) - np.min(r)),
        tail_energy=tail_energy(x),
    )


class _Deflation:
    """Shift-aligned deflation factor ``prod_i (d_i^-p + sigma)`` and its gradient."""

    def __init__(self, known: list[TrajectoryCoeffs], cfg: SolverConfig):
        self.known = known
        self.power = cfg.deflation_power
        self.sigma = cfg.deflation_shift
        self.grid = cfg.orbit_grid
        self.cap = cfg.window_cap

    def align(self, x: TrajectoryCoeffs) -> list[np.ndarray]:
        out = []
        for y in self.known:
            s = orbit_distance(x, y, grid=self.grid, cap=self.cap).s_star
            out.append(shift(y, s).packed())
        return out

    def factor(self, u: np.ndarray, aligned: list[np.ndarray], W: np.ndarray, T: float):
        D = 1.0
        dlog = np.zeros_like(u)
        for v in aligned:
            diff = u - v
            d2 = T * float(np.sum(W * diff * diff))
            if d2 == 0.0:
                return math.inf, dlog
            m = d2 ** (-0.5 * self.power) + self.sigma
            D *= m
            dm = -self.power * d2 ** (-0.5 * self.power - 1.0) * T * W * diff
            dlog += dm / m
        return D, D * dlog


def hessian_samples(p: PotentialSpec, pos: np.ndarray) -> np.ndarray:
    """Central-difference Hessians of V at each sample point, shape ``(Nq, n, n)``."""
    n = pos.shape[-1]
    h = 1e-5 * (1.0 + np.abs(pos))
    out = np.empty(pos.shape[:-1] + (n, n))
    for b in range(n):
        e = np.zeros_like(pos)
        e[..., b] = h[..., b]
        out[..., :, b] = (p.gradient(pos + e) - p.gradient(pos - e)) / (2.0 * h[..., b : b + 1])
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _phase_row(x0: TrajectoryCoeffs):
    """Linear functional ``u -> sum omega Im(conj(c0) c)`` killing the shift direction."""
    lay = x0.layout
    w = x0.omega * x0.c.conj()
    D = lay.packed_size
    row = np.empty(D)
    for i in range(D):
        e = np.zeros(D)
        e[i] = 1.0
        row[i] = float(np.sum(np.imag(w * lay.unpack(e))))
    nrm = np.linalg.norm(row)
    return row / nrm if nrm > 0 else row


def refine(
    x0: TrajectoryCoeffs,
    p: PotentialSpec,
    cfg: SolverConfig,
    deflation_set: list | None = None,
    start: int = -1,
) -> SolutionRecord:
    """Drive the Galerkin residual to zero by Levenberg-Marquardt.

    The residual is multiplied by a deflation factor built from the shift-aligned
    distances to every trajectory in ``deflation_set`` (SolutionRecords or
    TrajectoryCoeffs). Raises Diverged or Stagnated on failure.
    """
    sym, M, Nq = x0.sym, x0.M, cfg.quad
    lay = layout(sym, M)
    T = sym.T
    W = lay.packed_weights()
    known = [k.coeffs if isinstance(k, SolutionRecord) else k for k in (deflation_set or [])]
    defl = _Deflation(known, cfg) if known else None
    phase = _phase_row(x0) if cfg.phase_fix and not is_fixed_point(x0) else None
    u0 = x0.packed()
    phase_target = float(phase @ u0) if phase is not None else 0.0
    sqT = math.sqrt(T)

    def raw(u):
        x = TrajectoryCoeffs(sym, M, lay.unpack(u))
        return sqT * lay.pack(gradient(x, p, Nq, metric="L2").coeffs.c)

    basis = synthesize(sym, M, lay.unpack(np.eye(lay.packed_size)), Nq)  # (D, Nq, n)
    w2 = lay.packed_weights() - 1.0

    def jac_raw(u):
        x = TrajectoryCoeffs(sym, M, lay.unpack(u))
        (pos,) = sample(x, Nq, derivatives=0)
        Hk = hessian_samples(p, pos)
        Y = np.einsum("kab,ikb->ika", Hk, basis)
        return sqT * (np.diag(w2) - lay.pack(twisted_transform(sym, M, Y)).T)

    def system(u, with_jac):
        r = raw(u)
        J = jac_raw(u) if with_jac else None
        if defl is not None:
            aligned = defl.align(TrajectoryCoeffs(sym, M, lay.unpack(u)))
            Dv, dD = defl.factor(u, aligned, W, T)
            if not math.isfinite(Dv):
                return None, None, r
            rd = Dv * r
            if with_jac:
                J = Dv * J + np.outer(r, dD)
        else:
            rd = r
        if phase is not None:
            rd = np.append(rd, phase @ u - phase_target)
            if with_jac:
                J = np.vstack([J, phase])
        return rd, J, r

    u = u0.copy()
    rd, J, r = system(u, True)
    if rd is None:
        raise Stagnated("start coincides with a deflated solution", 0, float(np.linalg.norm(r)))
    cost = 0.5 * float(rd @ rd)
    A = J.T @ J
    lam = 1e-3 * float(np.max(np.diag(A), initial=1.0))
    nu = 2.0
    stall = 0
    for it in range(cfg.max_iters + 1):
        res_l2 = float(np.linalg.norm(r))
        phase_ok = phase is None or abs(phase @ u - phase_target) <= cfg.residual_tol
        if res_l2 <= cfg.residual_tol and phase_ok:
            x = TrajectoryCoeffs(sym, M, lay.unpack(u))
            return make_record(x, p, Nq, start=start, iterations=it)
        if it == cfg.max_iters:
            break
        g = J.T @ rd
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-12 * max(float(np.max(np.diag(A))), 1.0))
        accepted = False
        for _ in range(30):
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= nu
                nu *= 2.0
                continue
            u_new = u + step
            rd_new, _, r_new = system(u_new, False)
            if rd_new is None or not np.all(np.isfinite(rd_new)):
                lam *= nu
                nu *= 2.0
                continue
            cost_new = 0.5 * float(rd_new @ rd_new)
            pred = 0.5 * float(step @ (lam * diag * step - g))
            gain = (cost - cost_new) / pred if pred > 0 else -1.0
            if gain > 0:
                accepted = True
                lam *= max(1.0 / 3.0, 1.0 - (2.0 * gain - 1.0) ** 3)
                nu = 2.0
                rel = float(np.linalg.norm(step)) / (1.0 + float(np.linalg.norm(u)))
                stall = stall + 1 if (cost - cost_new) <= 1e-12 * cost and rel < 1e-12 else 0
                u = u_new
                break
            lam *= nu
            nu *= 2.0
        if not accepted or stall >= 5:
            raise Stagnated(f"no decrease after {it + 1} iterations", it + 1, res_l2)
        if not np.all(np.isfinite(u)) or np.linalg.norm(u) > 1e8 * (1.0 + np.linalg.norm(u0)):
            raise Diverged(f"iterate blew up at iteration {it + 1}", it + 1, res_l2)
        rd, J, r = system(u, True)
        cost = 0.5 * float(rd @ rd)
    raise Stagnated(f"max_iters={cfg.max_iters} reached", cfg.max_iters, float(np.linalg.norm(r)))


@dataclass(frozen=True)
class ExclusionSet:
    """Union of shift-invariant H1 balls ``{z : orbit_distance(z, y_i) < radius}``."""

    centers: tuple
    radius: float

    def distance_to_complement(self, z: TrajectoryCoeffs, grid: int = 128) -> float:
        if not self.centers:
            return 0.0
        d = min(orbit_distance(z, y, grid=grid).distance for y in self.centers)
        return max(0.0, self.radius - d)


@dataclass
class FlowResult:
    endpoint: TrajectoryCoeffs
    energy_start: float
    energy_end: float
    min_gradient_norm: float
    near_critical: bool
    reached_lower_level: bool
    times: np.ndarray
    energies: np.ndarray
    nfev: int


def cutoff(e: float, gnorm: float, dU: float, c: float, eps: float) -> float:
    """Equivariant cutoff ``dist(z, A^c) / (dist(z, A^c) + dist(z, B))``.

    Distances to the energy bands are the first-order estimates
    ``|E(z) - level| / ||E'(z)||``; ``dU`` is the distance from ``z`` to the
    complement of the exclusion set.
    """
    se = math.sqrt(eps)
    g = max(gnorm, 1e-300)
    to_ac = min((e - (c - 2 * eps)) / g, ((c + 2 * eps) - e) / g, 2 * se - dU)
    if to_ac <= 0.0:
        return 0.0
    to_b = max((c - eps - e) / g, (e - (c + eps)) / g, dU - se, 0.0)
    return to_ac / (to_ac + to_b)


def deformation_flow(
    x0: TrajectoryCoeffs,
    p: PotentialSpec,
    cfg: SolverConfig,
    c: float,
    epsilon: float,
    U: ExclusionSet | None = None,
    field_fn=None,
    rtol: float = 1e-8,
) -> FlowResult:
    """Integrate ``z' = -psi(z) v(z) / ||v(z)||`` for time ``sqrt(epsilon)``.

    ``v`` defaults to the H1 gradient of the action, which is already
    equivariant; ``field_fn`` may supply another equivariant field (for
    instance a :func:`torsion.action.shift_average`). Energies are recorded at
    the accepted integrator steps.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    sym, M, Nq = x0.sym, x0.M, cfg.quad
    lay = layout(sym, M)
    state = {"min_g": math.inf, "moved": False}

    def rhs(_t, u):
        x = TrajectoryCoeffs(sym, M, lay.unpack(u))
        e = action(x, p, Nq).total
        v = (field_fn or (lambda z: gradient(z, p, Nq, "H1")))(x)
        v = v.coeffs if hasattr(v, "coeffs") else v
        gn = norm_h1(gradient(x, p, Nq, "H1").coeffs) if field_fn else norm_h1(v)
        dU = U.distance_to_complement(x) if U is not None else 0.0
        psi = cutoff(e, gn, dU, c, epsilon)
        if psi > 0.0:
            state["min_g"] = min(state["min_g"], gn)
            state["moved"] = True
        vn = norm_h1(v)
        if psi == 0.0 or vn == 0.0:
            return np.zeros_like(u)
        return lay.pack(v.c) * (-psi / vn)

    u0 = x0.packed()
    e0 = action(x0, p, Nq).total
    t_end = math.sqrt(epsilon)
    atol = rtol * (1.0 + float(np.linalg.norm(u0)))
    sol = scipy.integrate.solve_ivp(rhs, (0.0, t_end), u0, method="RK45", rtol=rtol, atol=atol)
    if sol.status != 0:
        raise StepSizeUnderflow(sol.message)
    # a path on which the cutoff never switched on is the identity, exactly
    end = TrajectoryCoeffs(sym, M, lay.unpack(sol.y[:, -1])) if state["moved"] else x0
    energies = np.array([action(TrajectoryCoeffs(sym, M, lay.unpack(sol.y[:, k])), p, Nq).total for k in range(sol.t.size)])
    e1 = float(energies[-1])
    min_g = state["min_g"]
    return FlowResult(
        endpoint=end,
        energy_start=e0,
        energy_end=e1,
        min_gradient_norm=min_g,
        near_critical=min_g < 4.0 * math.sqrt(epsilon),
        reached_lower_level=e1 <= c - epsilon,
        times=sol.t,
        energies=energies,
        nfev=int(sol.nfev),
    )


def _classify(rec: SolutionRecord, orbits: list[SolutionRecord], cfg: SolverConfig, ambiguous: list) -> bool:
    """Assign ``rec.orbit_id``; True when it opens a new orbit."""
    tol = cfg.dedup
    best, best_d = None, math.inf
    for o in orbits:
        d = orbit_distance(rec.coeffs, o.coeffs, grid=cfg.orbit_grid, cap=cfg.window_cap).distance
        if d < best_d:
            best, best_d = o, d
    if best is not None and best_d <= tol:
        rec.orbit_id = best.orbit_id
        return False
    rec.orbit_id = len(orbits)
    for o in orbits:
        d = orbit_distance(rec.coeffs, o.coeffs, grid=cfg.orbit_grid, cap=cfg.window_cap).distance
        if d <= 10 * tol:
            ambiguous.append((o.orbit_id, rec.orbit_id, d))
    return True


def solve_multiplicity(sym: SymmetryData, p: PotentialSpec, cfg: SolverConfig | None = None) -> MultiplicityReport:
    """Seed on X+ and refine with deflation; count distinct non-fixed orbits against p_T / 2."""
    cfg = cfg or SolverConfig()
    if p.n != sym.n:
        raise ValueError(f"potential dimension {p.n} does not match symmetry dimension {sym.n}")
    report = count_pT(sym)
    seeds = seed_starts(report, cfg, sym)
    Nq = cfg.quad
    zero = TrajectoryCoeffs.zeros(sym, cfg.M)
    deflation: list[TrajectoryCoeffs] = [zero]
    records: list[SolutionRecord] = []
    orbits: list[SolutionRecord] = []
    fixed: list[SolutionRecord] = []
    ambiguous: list = []
    failures: list = []

    def run(item):
        i, x0 = item
        snapshot = list(deflation)
        try:
            if cfg.warmup:
                e = action(x0, p, Nq).total
                x0 = deformation_flow(x0, p, cfg, c=e, epsilon=cfg.warmup_epsilon).endpoint
            return i, refine(x0, p, cfg, snapshot, start=i), None
        except RefineFailure as exc:
            return i, None, exc

    items = list(enumerate(seeds))
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for r0 in range(0, len(items), cfg.round_size):
            batch = items[r0 : r0 + cfg.round_size]
            results = list(pool.map(run, batch)) if pool else [run(b) for b in batch]
            for i, rec, exc in sorted(results, key=lambda t: t[0]):
                if rec is None:
                    failures.append({"start": i, "reason": type(exc).__name__, "message": str(exc),
                                     "iterations": exc.iterations, "residual_l2": exc.residual_l2})
                    log.info("start %d failed: %s", i, exc)
                    continue
                if rec.is_fixed_point:
                    if all(np.linalg.norm(rec.coeffs.c - f.coeffs.c) > 1e-8 for f in fixed):
                        rec.orbit_id = -1 - len(fixed)
                        fixed.append(rec)
                        deflation.append(rec.coeffs)
                    records.append(rec)
                    continue
                if _classify(rec, orbits, cfg, ambiguous):
                    orbits.append(rec)
                    deflation.append(rec.coeffs)
                records.append(rec)
    finally:
        if pool:
            pool.shutdown()

    k = len(orbits)
    dist = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            d = orbit_distance(orbits[a].coeffs, orbits[b].coeffs, grid=cfg.orbit_grid, cap=cfg.window_cap).distance
            dist[a, b] = dist[b, a] = d
    bound = report.p_T // 2
    return MultiplicityReport(
        p_T=report.p_T,
        bound=bound,
        found_orbits=k,
        verdict="meets_bound" if k >= bound else "below_bound",
        records=records,
        orbit_distances=dist,
        ambiguous_pairs=ambiguous,
        tail_energy=max((r.tail_energy for r in records), default=0.0),
        critical_values=sorted(o.action_value for o in orbits),
        failures=failures,
        spectral=report,
    )


def with_overrides(cfg: SolverConfig, **kw) -> SolverConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
