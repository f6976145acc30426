"""Command-line front end: ``torsion analyze|audit|solve|verify --problem FILE``.

Exit codes: 0 ran, 1 verification failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import potential as pot
from .action import action, residual
from .potential import SamplingConfig, audit_conditions
from .solver import SolverConfig, solve_multiplicity
from .spectral import SpectralError, SymmetryData, count_pT, rotation_matrix, simultaneous_diagonalize
from .trajectory import evaluate, fit, read_csv, to_csv

SCHEMA = "torsion/1"
EXIT_OK, EXIT_VERIFY_FAILED, EXIT_BAD_INPUT = 0, 1, 2


class ProblemError(ValueError):
    """Malformed or invalid problem file; ``field`` locates the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# ---- deterministic JSON ----------------------------------------------------


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return "null" if obj is None else ("true" if obj else "false")
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in seq):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with insertion-ordered keys and floats at 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"


# ---- problem files ---------------------------------------------------------

_ANGLE = re.compile(r"^\s*([+-]?)\s*(\d+(?:\.\d*)?)?\s*\*?\s*(pi)?\s*(?:/\s*(\d+(?:\.\d*)?))?\s*$")


def parse_angle(value, field: str = "angle") -> float:
    """Number or a string such as ``"pi/2"``, ``"3pi/4"``, ``"-2*pi/3"``, ``"0.25"``."""
    if isinstance(value, bool):
        raise ProblemError(field, "expected a number or a string like 'pi/2'")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ProblemError(field, "expected a number or a string like 'pi/2'")
    m = _ANGLE.match(value.lower())
    if not m or (m.group(2) is None and m.group(3) is None):
        raise ProblemError(field, f"cannot parse angle {value!r}")
    sign, coef, has_pi, den = m.groups()
    q = Fraction(coef) if coef else Fraction(1)
    if den:
        if Fraction(den) == 0:
            raise ProblemError(field, "division by zero")
        q /= Fraction(den)
    if sign == "-":
        q = -q
    return float(q) * math.pi if has_pi else float(q)


def _block(spec, field: str) -> np.ndarray:
    if spec in (1, "identity"):
        return np.eye(1)
    if spec in (-1, "minus_identity"):
        return -np.eye(1)
    if isinstance(spec, dict) and set(spec) == {"rotation"}:
        return rotation_matrix(parse_angle(spec["rotation"], f"{field}.rotation"))
    if isinstance(spec, dict) and set(spec) == {"matrix"}:
        return _matrix(spec["matrix"], f"{field}.matrix")
    raise ProblemError(field, f"unrecognized block {spec!r}")


def _matrix(rows, field: str) -> np.ndarray:
    try:
        A = np.array(rows, dtype=float)
    except (TypeError, ValueError):
        raise ProblemError(field, "matrix entries must be numbers") from None
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ProblemError(field, f"expected a square matrix, got shape {A.shape}")
    return A


def parse_Q(spec, n: int) -> np.ndarray:
    if spec == "identity":
        Q = np.eye(n)
    elif spec == "minus_identity":
        Q = -np.eye(n)
    elif isinstance(spec, dict) and len(spec) == 1:
        (key, val), = spec.items()
        if key == "rotation":
            if n < 2:
                raise ProblemError("Q.rotation", "needs n >= 2")
            Q = np.eye(n)
            Q[:2, :2] = rotation_matrix(parse_angle(val, "Q.rotation"))
        elif key == "matrix":
            Q = _matrix(val, "Q.matrix")
        elif key == "blocks":
            if not isinstance(val, list) or not val:
                raise ProblemError("Q.blocks", "expected a non-empty list")
            blocks = [_block(b, f"Q.blocks[{i}]") for i, b in enumerate(val)]
            size = sum(b.shape[0] for b in blocks)
            Q = np.zeros((size, size))
            k = 0
            for b in blocks:
                d = b.shape[0]
                Q[k : k + d, k : k + d] = b
                k += d
        else:
            raise ProblemError("Q", f"unknown constructor {key!r}")
    else:
        raise ProblemError("Q", "expected 'identity', 'minus_identity' or one of {rotation, matrix, blocks}")
    if Q.shape != (n, n):
        raise ProblemError("Q", f"shape {Q.shape} does not match n={n}")
    return Q


_TOP_KEYS = {"n", "Q", "T", "potential", "solver", "audit", "output"}
_SOLVER_KEYS = {f.name for f in fields(SolverConfig)}
_AUDIT_KEYS = {f.name for f in fields(SamplingConfig)}


@dataclass
class Problem:
    n: int
    Q: np.ndarray
    T: float
    potential: pot.PotentialSpec
    potential_json: dict
    sym: SymmetryData
    solver: SolverConfig
    audit: SamplingConfig
    output: str | None


def _unknown(obj: dict, allowed: set, where: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ProblemError(f"{where}{extra[0]}", "unknown key")


def parse_problem(data, overrides: dict | None = None) -> Problem:
    if not isinstance(data, dict):
        raise ProblemError("<root>", "expected a JSON object")
    _unknown(data, _TOP_KEYS, "")
    for key in ("n", "Q", "T", "potential"):
        if key not in data:
            raise ProblemError(key, "missing required key")
    n = data["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ProblemError("n", "expected a positive integer")
    Q = parse_Q(data["Q"], n)
    T = parse_angle(data["T"], "T")
    if not T > 0:
        raise ProblemError("T", "must be positive")

    pspec = data["potential"]
    if not isinstance(pspec, dict):
        raise ProblemError("potential", "expected an object")
    _unknown(pspec, {"family", "name", "params"}, "potential.")
    family = pspec.get("family")
    if family == "external":
        family = pspec.get("name")
        if not isinstance(family, str):
            raise ProblemError("potential.name", "external potentials need the registered family name")
    elif "name" in pspec:
        raise ProblemError("potential.name", "only valid with family 'external'")
    params = pspec.get("params", {})
    if not isinstance(params, dict):
        raise ProblemError("potential.params", "expected an object")
    try:
        p = pot.builtin(family, params, n)
    except pot.UnknownFamily as exc:
        raise ProblemError("potential.family", exc.args[0]) from None
    except (pot.BadParameters, ValueError, TypeError) as exc:
        raise ProblemError("potential.params", str(exc)) from None

    sol = dict(data.get("solver", {}))
    if not isinstance(data.get("solver", {}), dict):
        raise ProblemError("solver", "expected an object")
    _unknown(sol, _SOLVER_KEYS, "solver.")
    sol.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = SolverConfig(**sol)
    except (TypeError, ValueError) as exc:
        raise ProblemError("solver", str(exc)) from None

    aud = data.get("audit", {})
    if not isinstance(aud, dict):
        raise ProblemError("audit", "expected an object")
    _unknown(aud, _AUDIT_KEYS, "audit.")
    if "radii" in aud:
        aud = dict(aud, radii=tuple(aud["radii"]))
    try:
        acfg = SamplingConfig(**aud)
    except (TypeError, ValueError) as exc:
        raise ProblemError("audit", str(exc)) from None

    try:
        sym = simultaneous_diagonalize(Q, p.hessian0, T)
    except SpectralError as exc:
        raise ProblemError("Q", str(exc)) from None
    out = data.get("output")
    if out is not None and not isinstance(out, str):
        raise ProblemError("output", "expected a directory path string")
    return Problem(n, Q, T, p, {"family": pspec.get("family"), "params": params}, sym, cfg, acfg, out)


def load_problem(path, overrides: dict | None = None) -> Problem:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ProblemError("<file>", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    return parse_problem(data, overrides)


# ---- commands --------------------------------------------------------------


def _header(command: str) -> dict:
    return {"schema": SCHEMA, "command": command}


def cmd_analyze(problem: Problem) -> dict:
    sym = problem.sym
    rep = count_pT(sym)
    doc = _header("analyze")
    doc.update(
        n=sym.n,
        T=sym.T,
        theta=list(sym.theta),
        mu=list(sym.mu),
        p_T=rep.p_T,
        bound=rep.bound,
        M0=rep.M0,
        fix_dimension=rep.fix_dimension,
        xplus_modes=[{"j": i.j, "m": i.m, "omega": i.omega, "lambda": sym.mu[i.j] - i.omega**2} for i in rep.xplus_modes],
        lambda_table=[{"j": i.j, "m": i.m, "omega": i.omega, "lambda": lam} for i, lam in rep.lambda_table],
    )
    return doc


def cmd_audit(problem: Problem) -> dict:
    report = audit_conditions(problem.potential, problem.sym, problem.audit)
    doc = _header("audit")
    doc.update(report.to_json())
    return doc


def _config_json(cfg: SolverConfig) -> dict:
    out = {}
    for f in fields(cfg):
        out[f.name] = getattr(cfg, f.name)
    out["Nq"] = cfg.quad
    out["dedup_tol"] = cfg.dedup
    return out


def cmd_solve(problem: Problem, out_dir=None) -> dict:
    """Run the multiplicity solver; writes ``report.json`` and one CSV per accepted solution."""
    cfg = problem.solver
    rep = solve_multiplicity(problem.sym, problem.potential, cfg)
    out = Path(out_dir or problem.output or "torsion_out")
    out.mkdir(parents=True, exist_ok=True)
    solutions = []
    for k, r in enumerate(rep.records):
        name = f"solution_{k:03d}.csv"
        to_csv(r.coeffs, out / name)
        solutions.append(
            {
                "orbit_id": r.orbit_id,
                "is_fixed_point": r.is_fixed_point,
                "action": r.action_value,
                "residual": r.residual_l2,
                "collocation_residual": r.collocation_residual,
                "radius_estimate": r.radius_estimate,
                "radius_spread": r.radius_spread,
                "start_index": r.start_index,
                "iterations": r.iterations,
                "csv_path": name,
            }
        )
    doc = _header("solve")
    doc.update(
        potential=problem.potential_json,
        p_T=rep.p_T,
        bound=rep.bound,
        found_orbits=rep.found_orbits,
        verdict=rep.verdict,
        critical_values=rep.critical_values,
        orbit_distances=[list(row) for row in rep.orbit_distances],
        ambiguous_pairs=[{"a": a, "b": b, "distance": d} for a, b, d in rep.ambiguous_pairs],
        tail_energy=rep.tail_energy,
        solutions=solutions,
        failures=rep.failures,
        config=_config_json(cfg),
    )
    (out / "report.json").write_text(dumps(doc), encoding="utf-8")
    return doc


def verify_csv(problem: Problem, path, Nq: int | None = None) -> dict:
    """Refit a trajectory CSV and check the equation of motion and the boundary condition."""
    meta, t, pos, _vel = read_csv(path)
    sym = problem.sym
    if meta["n"] != sym.n or abs(meta["T"] - sym.T) > 1e-12 * sym.T:
        raise ProblemError(str(path), f"file has n={meta['n']}, T={meta['T']}; problem has n={sym.n}, T={sym.T}")
    M = meta["M"]
    x = fit(sym, M, t, pos)
    Nq = Nq or 4 * M + 4
    res = residual(x, problem.potential, Nq)
    fitted, _ = evaluate(x, t)
    shifted, _ = evaluate(x, t + sym.T)
    scale = 1.0 + float(np.max(np.abs(pos), initial=0.0))
    bc = float(np.max(np.linalg.norm(shifted - pos @ sym.Q.T, axis=-1), initial=0.0))
    fit_err = float(np.max(np.linalg.norm(fitted - pos, axis=-1), initial=0.0))
    tol = 1e-6 * (1.0 + res.max_force)
    passed = res.collocation <= tol and bc <= 1e-8 * scale and fit_err <= 1e-8 * scale
    return {
        "csv_path": str(path),
        "M": M,
        "collocation_residual": res.collocation,
        "tolerance": tol,
        "residual": res.residual_l2,
        "bc_error": bc,
        "fit_error": fit_err,
        "action": action(x, problem.potential, Nq).total,
        "passed": passed,
    }


def cmd_verify(problem: Problem, target, Nq: int | None = None) -> dict:
    target = Path(target)
    if target.suffix.lower() == ".json":
        try:
            report = json.loads(target.read_text(encoding="utf-8"))
            paths = [target.parent / s["csv_path"] for s in report["solutions"]]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ProblemError(str(target), f"not a solve report: {exc}") from None
    else:
        paths = [target]
    checks = []
    for p in paths:
        try:
            checks.append(verify_csv(problem, p, Nq))
        except (OSError, ValueError) as exc:
            if isinstance(exc, ProblemError):
                raise
            raise ProblemError(str(p), str(exc)) from None
    doc = _header("verify")
    doc.update(passed=all(c["passed"] for c in checks), checks=checks)
    return doc


# ---- argument handling -----------------------------------------------------


def _summary(command: str, doc: dict) -> str:
    if command == "analyze":
        modes = ", ".join(f"(j={m['j']}, m={m['m']}, omega={m['omega']:.6g})" for m in doc["xplus_modes"])
        return (
            f"p_T = {doc['p_T']}\nbound = {doc['bound']}\nM0 = {doc['M0']:.12g}\n"
            f"fix dimension = {doc['fix_dimension']}\nX+ modes: {modes or 'none'}"
        )
    if command == "audit":
        return "\n".join(f"{k}: {v['status']}  {v['detail']}" for k, v in doc["conditions"].items())
    if command == "solve":
        lines = [f"p_T = {doc['p_T']}, bound = {doc['bound']}, found_orbits = {doc['found_orbits']}: {doc['verdict']}"]
        for s in doc["solutions"]:
            tag = "fixed" if s["is_fixed_point"] else f"orbit {s['orbit_id']}"
            lines.append(
                f"  {tag}: action {s['action']:.10g}, residual {s['residual']:.2e}, radius {s['radius_estimate']:.10g} -> {s['csv_path']}"
            )
        return "\n".join(lines)
    lines = []
    for c in doc["checks"]:
        verdict = "pass" if c["passed"] else "FAIL"
        lines.append(f"{verdict} {c['csv_path']}: collocation {c['collocation_residual']:.2e} (tol {c['tolerance']:.2e}), bc {c['bc_error']:.2e}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="torsion", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("analyze", "audit", "solve", "verify"):
        sp = sub.add_parser(name)
        sp.add_argument("--problem", required=True, help="problem definition (JSON)")
        sp.add_argument("--json", action="store_true", help="print machine-readable JSON only")
        if name in ("audit", "solve"):
            sp.add_argument("--seed", type=int)
        if name == "solve":
            sp.add_argument("--out", help="output directory for report.json and CSVs")
            sp.add_argument("--starts", type=int)
            sp.add_argument("--modes", type=int, help="truncation order M")
        if name in ("solve", "verify"):
            sp.add_argument("--quad", type=int, help="quadrature points Nq")
        if name == "verify":
            sp.add_argument("solution", help="solution CSV or a solve report.json")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.command == "solve":
            overrides = {"seed": args.seed, "starts": args.starts, "M": args.modes, "Nq": args.quad}
        problem = load_problem(args.problem, overrides)
        if args.command == "audit" and args.seed is not None:
            problem.audit = SamplingConfig(**{**{f.name: getattr(problem.audit, f.name) for f in fields(SamplingConfig)}, "seed": args.seed})
        if args.command == "analyze":
            doc = cmd_analyze(problem)
        elif args.command == "audit":
            doc = cmd_audit(problem)
        elif args.command == "solve":
            doc = cmd_solve(problem, args.out)
        else:
            doc = cmd_verify(problem, args.solution, args.quad)
    except ProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    sys.stdout.write(dumps(doc) if args.json else _summary(args.command, doc) + "\n")
    if args.command == "verify" and not doc["passed"]:
        return EXIT_VERIFY_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
