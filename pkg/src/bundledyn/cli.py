"""Command-line interface: ``bundledyn {simulate,converge,classify,lax,validate}``.

Exit codes: 0 on success, 2 for configuration or argument errors, 3 for
failures during a run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .constraints import classify_dirac
from .errors import BundleError
from .geometry import validate_properness
from .integrator import Trajectory, convergence_study, integrate
from .systems import grid_samples, surface_samples
from .toda import (
    ORACLE_SIGN,
    PRINTED_SIGN,
    TodaParams,
    build_lax,
    epsilon_crit,
    epsilon_evolution,
    flaschka_drift,
    oracle_sign,
    toda_rhs,
    zero_curvature_residual,
)
from .eigen import symmetric_spectrum

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail("config", message, EXIT_CONFIG)


class _Exit(Exception):
    def __init__(self, code: int):
        self.code = code


def _fail(category: str, message: str, code: int):
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    raise _Exit(code)


def _num(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, (np.floating,)):
        return _num(float(x))
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    if isinstance(x, dict):
        return {k: _num(v) for k, v in x.items()}
    return x


def _write_json(path, doc) -> None:
    text = json.dumps(_num(doc), indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _fmt(v: float) -> str:
    return repr(float(v))


def trajectory_csv(traj: Trajectory, spec, digest: str) -> str:
    """CSV text: a digest comment line, the header, then one row per state."""
    cols = ["t"]
    cols += [f"x{i + 1}" for i in range(2 * spec.n)]
    cols += [f"xi{i + 1}" for i in range(spec.k)]
    cols += [f"pi{i + 1}" for i in range(spec.k)]
    cols += ["phi", "energy", "h_used"]
    lines = [f"# config_sha256={digest}", ",".join(cols)]
    for s, d in zip(traj.states, traj.diagnostics):
        vals = [s.t, *s.x, *s.xi, *s.pi, d.phi_value, d.energy, d.h_used]
        lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def diagnostics_jsonl(traj: Trajectory, digest: str) -> str:
    out = []
    for s, d in zip(traj.states[1:], traj.diagnostics[1:]):
        rec = {"config_digest": digest, "t": s.t, **d.as_dict()}
        out.append(json.dumps(_num(rec), sort_keys=True))
    return "\n".join(out) + ("\n" if out else "")


def _load(path) -> RunConfig:
    try:
        return load_config(path)
    except ConfigError as exc:
        _fail("config", str(exc), EXIT_CONFIG)


def _report_path(args, cfg: RunConfig | None):
    if getattr(args, "out", None):
        return args.out
    if cfg is not None and cfg.output.get("report"):
        return cfg.output["report"]
    return None


# commands


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    out_traj = args.out_traj or cfg.output["trajectory"]
    out_diag = args.out_diag or cfg.output["diagnostics"]
    entry, state0 = cfg.build()
    spec = entry.spec
    digest = cfg.digest()
    try:
        traj = integrate(spec, state0, cfg.integrator_config())
    except BundleError as exc:
        _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    Path(out_traj).write_text(trajectory_csv(traj, spec, digest))
    Path(out_diag).write_text(diagnostics_jsonl(traj, digest))
    energies = [d.energy for d in traj.diagnostics]
    summary = {
        "config_digest": digest,
        "system": cfg.system,
        "steps": len(traj) - 1,
        "t_final": traj.final.t,
        "max_abs_phi": traj.max_abs_phi() if spec.constraint is not None else None,
        "max_abs_phi_predicted": traj.max_abs_phi_predicted() if spec.constraint is not None else None,
        "energy_drift": energies[-1] - energies[0],
        "max_energy_deviation": max(abs(e - energies[0]) for e in energies),
        "clamps": sum(d.clamped for d in traj.diagnostics),
        "projection_iterations": sum(d.projection_iters for d in traj.diagnostics),
        "trajectory": str(out_traj),
        "diagnostics": str(out_diag),
    }
    _write_json("-", summary)
    return EXIT_OK


def cmd_converge(args) -> int:
    if args.levels < 3:
        _fail("config", "levels must be >= 3", EXIT_CONFIG)
    cfg = _load(args.config)
    entry, state0 = cfg.build()
    try:
        rep = convergence_study(entry.spec, state0, cfg.integrator_config(), args.levels)
    except BundleError as exc:
        _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    doc = {"config_digest": cfg.digest(), "system": cfg.system, "levels": args.levels, **rep.as_dict()}
    _write_json(_report_path(args, cfg), doc)
    return EXIT_OK


def cmd_classify(args) -> int:
    if args.samples < 1:
        _fail("config", "samples must be >= 1", EXIT_CONFIG)
    cfg = _load(args.config)
    entry, _ = cfg.build()
    if entry.spec.constraint is None:
        _fail("config", "system has no constraint to classify", EXIT_CONFIG)
    try:
        samples = surface_samples(entry.spec, args.samples, seed=args.seed)
        rep = classify_dirac(entry.spec, samples, backend=cfg.integrator["backend"])
    except BundleError as exc:
        _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    doc = {"config_digest": cfg.digest(), "system": cfg.system, **rep.as_dict()}
    _write_json(_report_path(args, cfg), doc)
    return EXIT_OK


def _parse_list(text, n, name):
    if text is None:
        return None
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        _fail("config", f"--{name} must be a comma-separated list of numbers", EXIT_CONFIG)
    if len(vals) != n:
        _fail("config", f"--{name} needs {n} values", EXIT_CONFIG)
    return np.array(vals)


def _coupled_drift(q, p, params: TodaParams, lam: float, t_final: float, dt: float) -> float:
    """Spectral drift of ``L(lam, eps)`` along Toda plus the oracle-sign error law (RK4)."""
    n = q.size
    z = np.concatenate([q, p, np.zeros(n - 1)])

    def f(w):
        qd, pd = toda_rhs(w[:n], w[n:2 * n])
        return np.concatenate([qd, pd, epsilon_evolution(w[n:2 * n])])

    ev0 = symmetric_spectrum(build_lax(q, p, np.zeros(n - 1), lam, params).L)
    steps = max(1, math.ceil(t_final / dt - 1e-9))
    h = t_final / steps
    for _ in range(steps):
        k1 = f(z)
        k2 = f(z + 0.5 * h * k1)
        k3 = f(z + 0.5 * h * k2)
        k4 = f(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    ev = symmetric_spectrum(build_lax(z[:n], z[n:2 * n], z[2 * n:], lam, params).L)
    return float(np.max(np.abs(ev - ev0)))


def cmd_lax(args) -> int:
    if not (args.dt > 0 and math.isfinite(args.dt)):
        _fail("config", "dt must be > 0", EXIT_CONFIG)
    if not args.t_final > 0:
        _fail("config", "t_final must be > 0", EXIT_CONFIG)
    try:
        params = TodaParams(args.n, args.delta0, args.alpha_noise)
    except BundleError as exc:
        _fail("config", str(exc), EXIT_CONFIG)
    n = args.n
    q = _parse_list(args.q, n, "q")
    p = _parse_list(args.p, n, "p")
    q = np.zeros(n) if q is None else q
    p = np.linspace(1.0, -1.0, n) if p is None else p
    eps0 = np.zeros(n - 1)

    residuals = {}
    for label, s in (("oracle", ORACLE_SIGN), ("printed", PRINTED_SIGN)):
        orders = zero_curvature_residual(q, p, eps0, epsilon_evolution(p, sign=s), params, per_order=True)
        residuals[label] = {f"lambda^{k}": v for k, v in orders.items()}
    drift = flaschka_drift(q, p, args.t_final, args.dt)
    doc = {
        "config_digest": hashlib.sha256(
            json.dumps(vars(args), sort_keys=True, default=str).encode()
        ).hexdigest(),
        "n": n,
        "q0": q.tolist(),
        "p0": p.tolist(),
        "t_final": args.t_final,
        "dt": args.dt,
        "oracle_sign": oracle_sign(),
        "epsilon_crit": epsilon_crit(p, params),
        "flaschka": drift,
        "zero_curvature_residual": residuals,
        "coupled_spectrum_drift": {
            str(lam): _coupled_drift(q, p, params, lam, args.t_final, args.dt) for lam in (0.0, 0.1)
        },
    }
    _write_json(args.out, doc)
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.grid < 1:
        _fail("config", "grid must be >= 1", EXIT_CONFIG)
    cfg = _load(args.config)
    entry, _ = cfg.build()
    try:
        pts = grid_samples(entry.spec, args.grid)
        rep = validate_properness(entry.spec, pts, R_min=args.r_min, alpha=args.alpha)
    except BundleError as exc:
        _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    doc = {"config_digest": cfg.digest(), "system": cfg.system, **rep.as_dict()}
    _write_json(_report_path(args, cfg), doc)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="bundledyn", description="Constrained dynamics on observation bundles.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="integrate a configured system")
    s.add_argument("config")
    s.add_argument("--out-traj")
    s.add_argument("--out-diag")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("converge", help="observed convergence orders")
    s.add_argument("config")
    s.add_argument("--levels", type=int, default=4)
    s.add_argument("--out")
    s.set_defaults(func=cmd_converge)

    s = sub.add_parser("classify", help="first/second-class constraint classification")
    s.add_argument("config")
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("lax", help="Toda Lax pair checks")
    s.add_argument("--n", type=int, default=4)
    s.add_argument("--t-final", type=float, default=10.0)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--delta0", type=float, default=0.5)
    s.add_argument("--alpha-noise", type=float, default=1.0)
    s.add_argument("--q", help="comma-separated initial positions")
    s.add_argument("--p", help="comma-separated initial momenta")
    s.add_argument("--out")
    s.set_defaults(func=cmd_lax)

    s = sub.add_parser("validate", help="sampled properness conditions")
    s.add_argument("config")
    s.add_argument("--grid", type=int, default=50)
    s.add_argument("--r-min", type=float, default=1.0)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _Exit as exc:
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
