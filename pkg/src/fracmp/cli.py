"""Command-line front end.

Each command reads a config, writes CSV artifacts to the output directory
and always leaves a ``manifest.json`` behind.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, config_dict, load_config
from .control import ControlProblem, anchor_grid, optimize_lipschitz, optimize_piecewise, write_candidates
from .energy import make_context, shifted_value
from .kernel import assemble_weights, eigenpairs, normalizing_constant, normalizing_constant_alt, y_norm
from .model import (
    ConditionReport,
    CostIntegrand,
    box_decomposition,
    calibrate,
    check_C1,
    check_C2,
    check_C3,
    check_C4,
    check_C5,
    check_C7,
    example_nonlinearity,
    make_sample,
    power_nonlinearity,
    quadratic_nonlinearity,
    tabulated_nonlinearity,
)
from .mpt import MPTSettings, refine_critical, solve_problem, verify_geometry, write_trace
from .space import GridFunction, build_grid
from .stability import StabilitySweep, make_sequences, solve_sweep, uniform_convergence_gap, write_sweep

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(x) for x in row])


# ---------------------------------------------------------------- setup


class Setup:
    """Grid, kernel, calibrated model and control box built from a config."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        g = cfg.grid
        try:
            self.grid = build_grid(g.n, g.axes(), g.h, g.collar, g.r_ext)
            self.K = assemble_weights(self.grid, cfg.operator.alpha)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.c = self.K.c
        m = cfg.model
        if m.name == "example":
            base = example_nonlinearity(m.gamma)
            centre = self.c / m.gamma
            default = (0.8 * centre, 1.2 * centre)
        elif m.name == "power_p":
            base = power_nonlinearity(m.p).with_constants(a=0.5, R=1.0)
            default = (0.0, 1.0)
        elif m.name == "quadratic":
            base = quadratic_nonlinearity(m.coef, m.forcing)
            default = (0.0, 1.0)
        else:
            base = _load_table(m.table, m.p)
            default = (0.0, 1.0)
        lo = default[0] if m.u_min is None else m.u_min
        hi = default[1] if m.u_max is None else m.u_max
        if not lo <= hi:
            raise ConfigError("model.u_min must not exceed model.u_max")
        self.bounds = (lo, hi)
        self.u0 = 0.5 * (lo + hi) if m.u0 is None else m.u0
        if not lo <= self.u0 <= hi:
            raise ConfigError("model.u0 must lie in [u_min, u_max]")
        self.sample = make_sample(self.grid.interior_coords, m.z_max, np.linspace(lo, hi, m.nu), m.nz)
        self.N = base
        if m.name in ("example", "custom-table"):
            try:
                self.N = calibrate(base, self.sample, self.c, m.zeta)
            except ValueError:
                self.N = base
        self.Phi = CostIntegrand(lambda x, z, u, t=m.cost_target: (z - t) ** 2, 2.0, "tracking")
        try:
            self.settings = MPTSettings(cfg.mpt.eta, cfg.mpt.P, cfg.mpt.tol_grad, cfg.mpt.tol_val, cfg.mpt.max_iter,
                                        sample_count=cfg.mpt.samples, seed=cfg.mpt.seed, workers=cfg.workers)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def zero(self) -> GridFunction:
        return GridFunction(self.grid, np.zeros(self.grid.n_nodes))

    def context(self, u=None, v=None):
        return make_context(self.K, self.N, self.u0 if u is None else u, v)


def _load_table(path: str, p: float):
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as exc:
        raise ConfigError(f"cannot read table: {exc}") from None
    z = np.unique(data["z"])
    u = np.unique(data["u"])
    if len(z) * len(u) != len(data):
        raise ConfigError("table must cover a full (z, u) grid")
    order = np.lexsort((data["u"], data["z"]))
    G = data["G"][order].reshape(len(z), len(u))
    Gz = data["Gz"][order].reshape(len(z), len(u)) if "Gz" in data.dtype.names else None
    return tabulated_nonlinearity(z, u, G, Gz, s=p, p=p)


# ---------------------------------------------------------------- commands


def cmd_constants(cfg: RunConfig, out: Path) -> int:
    n, a = cfg.grid.n, cfg.operator.alpha
    c1, c2 = normalizing_constant(n, a), normalizing_constant_alt(n, a)
    rel = abs(c1 - c2) / c1
    print(f"c({n}, {a}) = {c1:.17g}")
    print(f"alternative form = {c2:.17g}  (relative difference {rel:.3e})")
    write_csv(out / "constants.csv", ["n", "alpha", "c", "c_alt", "rel_diff"], [[n, a, c1, c2, rel]])
    return EXIT_OK if rel <= 1e-12 else EXIT_NUMERIC


def cmd_check_model(cfg: RunConfig, out: Path) -> int:
    s = Setup(cfg)
    n, a = cfg.grid.n, cfg.operator.alpha
    reports = [check_C1(s.N, s.sample), check_C2(s.N, s.sample, n, a)]
    for name, fn in (("C3", lambda: check_C3(s.N, s.sample)), ("C4", lambda: check_C4(s.N, 0.0, s.c, s.sample))):
        try:
            reports.append(fn())
        except ValueError as exc:
            reports.append(ConditionReport(name, False, info={"error": str(exc)}))
    half = 0.5 * (s.bounds[1] - s.bounds[0])
    reports.append(check_C5(s.N, s.u0, max(half, 1e-12), s.sample))
    reports.append(check_C7(s.Phi, s.sample, n, a))
    rows = []
    for r in reports:
        print(f"{r.name}: {'pass' if r.holds else 'FAIL'}" + (f"  c_fit={r.c_fit:.6g}" if r.c_fit is not None else ""))
        rows.append([r.name, r.holds, "" if r.c_fit is None else r.c_fit, "" if r.witness is None else r.witness])
    write_csv(out / "checks.csv", ["condition", "holds", "c_fit", "witness"], rows)
    return EXIT_OK if all(r.holds for r in reports) else EXIT_NUMERIC


def _node_table(path: Path, grid, columns: dict):
    names = list(columns)
    rows = []
    for i in range(grid.n_nodes):
        rows.append([i, *grid.coords[i], "interior" if grid.region[i] else "collar", *[columns[k][i] for k in names]])
    write_csv(path, ["index", *[f"x{d}" for d in range(grid.n)], "region", *names], rows)


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    s = Setup(cfg)
    ctx = s.context()
    if cfg.mpt.mode == "refine":
        w, gn = refine_critical(ctx, np.zeros(ctx.m), cfg.mpt.tol_grad)
        c, conv, iters = shifted_value(ctx, w.interior), gn <= cfg.mpt.tol_grad, 0
    else:
        res = solve_problem(ctx, s.settings)
        w, gn, c, conv, iters = res.w, res.grad_norm, res.c, res.converged, res.iterations
        write_trace(res, out / "trace.csv")
        if res.message:
            print(res.message)
    print(f"c* = {c:.12g}  |F'| = {gn:.3e}  converged = {conv}")
    write_csv(out / "result.csv", ["mode", "c_star", "grad_norm", "converged", "iterations"],
              [[cfg.mpt.mode, c, gn, conv, iters]])
    _node_table(out / "solution.csv", s.grid, {"w": w.values, "z": w.values})
    return EXIT_OK if conv else EXIT_NUMERIC


def cmd_geometry(cfg: RunConfig, out: Path) -> int:
    s = Setup(cfg)
    geo = verify_geometry(s.context(), cfg.mpt.eta, cfg.mpt.samples, cfg.mpt.seed, workers=cfg.workers)
    print(f"eta = {geo.eta}: sphere inf = {geo.sphere_inf:.6g}, F(omega1) = {geo.F_omega1:.6g}, pass = {geo.passed}")
    write_csv(out / "geometry.csv", ["eta", "sphere_inf", "F_omega1", "F_zero", "passed"],
              [[geo.eta, geo.sphere_inf, geo.F_omega1, geo.F_zero, geo.passed]])
    return EXIT_OK if geo.passed else EXIT_NUMERIC


def collar_direction(s: Setup, size: float) -> GridFunction:
    """Indicator of the collar scaled to Y-norm ``size`` (zero if size = 0)."""
    vals = np.zeros(s.grid.n_nodes)
    vals[s.grid.n_interior:] = 1.0
    d = GridFunction(s.grid, vals)
    return d * (size / y_norm(s.K, d)) if size > 0 else d * 0.0


def cmd_stability(cfg: RunConfig, out: Path) -> int:
    s = Setup(cfg)
    st = cfg.stability
    terms = make_sequences(s.K, s.u0, st.du, s.zero(), collar_direction(s, st.dv), st.K, s.bounds, st.l1,
                           st.rate, st.project)
    sweep = solve_sweep(StabilitySweep(s.K, s.N, terms, np.full(s.grid.n_interior, s.u0), s.zero(), s.settings,
                                       st.warm))
    write_sweep(sweep, out / "sweep.csv")
    ctx0 = s.context()
    gaps = [(t.k, *uniform_convergence_gap(s.context(t.u, t.v), ctx0, st.gap_radius, st.gap_samples, cfg.mpt.seed))
            for t in terms]
    write_csv(out / "gaps.csv", ["k", "sup_F_gap", "sup_grad_gap"], gaps)
    for r in sweep.rows:
        print(f"k={r.k:3d}  c_k={r.c:.10g}  |c_k-c_0|={r.c_gap:.3e}  d(w_k,W_0)={r.dist:.3e}  conv={r.converged}")
    print(f"projection to the X_0 complement: {'on' if st.project else 'off'}")
    return EXIT_NUMERIC if sweep.partial else EXIT_OK


def cmd_control(cfg: RunConfig, out: Path) -> int:
    s = Setup(cfg)
    cc = cfg.control
    values = cc.values or list(np.linspace(s.bounds[0], s.bounds[1], cc.n_values))
    problem = ControlProblem(s.K, s.N, s.zero(), s.Phi, s.bounds, s.settings)
    if cc.kind == "piecewise":
        splits = list(cc.splits) + [1] * (s.grid.n - len(cc.splits))
        try:
            labels = box_decomposition(s.grid, splits[: s.grid.n])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        res = optimize_piecewise(problem, labels, values, cc.mode)
    else:
        res = optimize_lipschitz(problem, cc.lam, anchor_grid(problem, cc.anchors), values)
    write_candidates(res, out / "control.csv")
    best = res.best
    _node_table(out / "best_state.csv", s.grid, {"z": best.z.values,
                                                 "u": np.concatenate([best.u.values, np.zeros(s.grid.n_collar)])})
    print(f"best J = {best.J:.12g} at control {res.best_key} ({res.mode}, {len(res.candidates)} candidates)")
    return EXIT_OK


def cmd_spectrum(cfg: RunConfig, out: Path) -> int:
    s = Setup(cfg)
    count = min(cfg.spectrum.count, s.grid.n_interior)
    ctx = s.context()
    rows = []
    for k, ep in enumerate(eigenpairs(s.K, count), 1):
        rows.append([k, ep.value, shifted_value(ctx, ep.vector.interior)])
        print(f"lambda_{k} = {ep.value:.10g}   F(rho_{k}) = {rows[-1][2]:.10g}")
    write_csv(out / "spectrum.csv", ["k", "lambda", "F_rho"], rows)
    return EXIT_OK


COMMANDS = {
    "constants": cmd_constants,
    "check-model": cmd_check_model,
    "solve": cmd_solve,
    "geometry": cmd_geometry,
    "stability": cmd_stability,
    "control": cmd_control,
    "spectrum": cmd_spectrum,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracmp", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="config file with section.key = value lines")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="random seed (overrides mpt.seed)")
    ap.add_argument("--workers", type=int, help="worker threads (overrides the config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    manifest = {"command": args.command, "version": __version__, "python": platform.python_version(),
                "numpy": np.__version__, "scipy": scipy.__version__}
    out = Path(args.out or "out")
    code = EXIT_CONFIG
    try:
        cfg = load_config(args.config) if args.config else RunConfig().validate()
        if args.out is None:
            out = Path(cfg.output)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            cfg.mpt = replace(cfg.mpt, seed=args.seed)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("workers must be >= 1")
            cfg.workers = args.workers
        manifest["config"] = config_dict(cfg)
        manifest["seed"] = cfg.mpt.seed
        manifest["workers"] = cfg.workers
        out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        manifest["error"] = str(exc)
        code = EXIT_CONFIG
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        manifest["error"] = str(exc)
        code = EXIT_NUMERIC
    finally:
        manifest["exit_code"] = code
        manifest["wall_time_s"] = time.perf_counter() - start
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
