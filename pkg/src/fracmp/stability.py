"""Convergence of critical points and values under perturbed (u, v).

A sweep solves the problems (u_k, v_k) = (u_0 + du/k^r, v_0 + dv/k^r) and
measures how far the computed solutions and levels are from those of the
limit problem.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyContext, make_context, shifted_gradient, shifted_value
from .kernel import KernelWeights, eigenpairs, project_complement, x0_seminorm, y_norm
from .model import Nonlinearity
from .mpt import MinimaxResult, MPTSettings, _refine, solve_problem, verify_geometry, x0_norm_vec
from .parallel import ordered_map
from .space import GridFunction, extend_by_zero


@dataclass(frozen=True, eq=False)
class SequenceTerm:
    k: int
    u: np.ndarray
    v: GridFunction
    u_dev: float
    v_dev: float


def make_sequences(K: KernelWeights, u0, du, v0: GridFunction, dv: GridFunction, count: int, bounds,
                   l1: float = math.inf, rate: float = 1.0, project: bool = True) -> list[SequenceTerm]:
    """Terms k = 1..count.  With ``project`` both v0 and dv are replaced by
    their Y-orthogonal complements to X_0 first (the map is linear, so the
    sequence is the projection of the unprojected one)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    m = K.domain.n_interior
    u0 = np.broadcast_to(np.asarray(u0, float), (m,)).copy()
    du = np.broadcast_to(np.asarray(du, float), (m,)).copy()
    lo, hi = bounds
    for end in (u0, u0 + du):
        if np.any(end < lo) or np.any(end > hi):
            raise ValueError("u0 and u0 + du must lie in U")
    if y_norm(K, dv) > l1 * (1 + 1e-12):
        raise ValueError("v0 + dv must lie in V")
    if project:
        v0, dv = project_complement(K, v0), project_complement(K, dv)
    out = []
    for k in range(1, count + 1):
        f = 1.0 / k**rate
        step = dv * f
        out.append(SequenceTerm(k, u0 + f * du, v0 + step, float(np.max(np.abs(f * du))), y_norm(K, step)))
    return out


def sample_ball(ctx: EnergyContext, radius: float, count: int, seed: int) -> np.ndarray:
    """Seeded points uniformly spread in radius inside the X_0 ball."""
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((count, ctx.m))
    radii = radius * rng.uniform(0.0, 1.0, count)
    return np.array([r * d / x0_norm_vec(ctx, d) for r, d in zip(radii, dirs)])


def uniform_convergence_gap(ctx_k: EnergyContext, ctx_0: EnergyContext, radius: float, sample_count: int = 100,
                            seed: int = 0) -> tuple[float, float]:
    """Sampled sup over the X_0 ball of |F_k - F_0| and |F_k' - F_0'|."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    pts = sample_ball(ctx_0, radius, sample_count, seed)
    df = max(abs(shifted_value(ctx_k, w) - shifted_value(ctx_0, w)) for w in pts)
    dg = max(float(np.linalg.norm(shifted_gradient(ctx_k, w) - shifted_gradient(ctx_0, w))) for w in pts)
    return float(df), float(dg)


def kuratowski_distance(K: KernelWeights, w: GridFunction, reps) -> float:
    reps = list(reps)
    if not reps:
        raise ValueError("representative set is empty")
    return min(x0_seminorm(K, w - r) for r in reps)


@dataclass(frozen=True)
class ShiftedSolution:
    z: GridFunction
    nonzero: bool


def corollary_shift(K: KernelWeights, w: GridFunction, v: GridFunction) -> ShiftedSolution:
    """z = w + v; equal to v outside the box.  ``nonzero`` flags z != v."""
    if np.any(w.exterior != 0.0):
        raise ValueError("w must be an X_0 function")
    return ShiftedSolution(w + v, x0_seminorm(K, w) > 0)


def critical_set(ctx: EnergyContext, settings: MPTSettings, extra_dirs: int = 2, tol: float = 1e-4) -> list[MinimaxResult]:
    """Converged mountain-pass solutions from several far-point directions
    (the constant function, its negative and the first eigenfunctions with
    both signs), deduplicated at X_0 distance ``tol``."""
    dirs = [np.ones(ctx.m), -np.ones(ctx.m)]
    for ep in eigenpairs(ctx.K, min(extra_dirs, ctx.m)):
        dirs += [ep.vector.interior, -ep.vector.interior]
    results = ordered_map(lambda d: solve_problem(ctx, settings, direction=d), dirs, 1)
    found: list[MinimaxResult] = []
    for res in results:
        if not res.converged:
            continue
        if all(x0_norm_vec(ctx, res.w.interior - f.w.interior) > tol for f in found):
            found.append(res)
    return found


@dataclass
class SweepRow:
    k: int
    u_dev: float
    v_dev: float
    c: float
    c_gap: float
    dist: float
    grad_norm: float
    converged: bool
    w: GridFunction = field(repr=False)


@dataclass
class StabilitySweep:
    K: KernelWeights
    N: Nonlinearity
    terms: list[SequenceTerm]
    u0: np.ndarray
    v0: GridFunction
    settings: MPTSettings = field(default_factory=MPTSettings)
    warm: bool = True
    base: MinimaxResult | None = None
    reps: list = field(default_factory=list)
    rows: list[SweepRow] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return any(not r.converged for r in self.rows)


def _reusable(ctx: EnergyContext, prev: MinimaxResult, tol: float) -> bool:
    return prev is not None and prev.converged and float(np.linalg.norm(shifted_gradient(ctx, prev.w.interior))) <= tol


def _continue(ctx: EnergyContext, prev: MinimaxResult, st: MPTSettings) -> MinimaxResult:
    """Newton from the previous solution; minimax from the previous path if
    that fails to give a nonzero critical point above the endpoint levels."""
    omega1 = prev.geometry.omega1 if prev.geometry is not None else None
    geo = verify_geometry(ctx, st.eta, st.sample_count, st.seed, direction=omega1, workers=st.workers)
    if geo.passed:
        w, gn, log = _refine(ctx, prev.w.interior, st.tol_grad, st.refine_max_iter)
        c = shifted_value(ctx, w)
        if gn <= st.tol_grad and c > max(0.0, geo.F_omega1) and x0_norm_vec(ctx, w) > 0:
            return MinimaxResult(extend_by_zero(w, ctx.K.domain), float(c), float(gn), geo, 0, True, prev.path,
                                 iterates=log, message="continued")
    return solve_problem(ctx, st, direction=omega1, init_path=prev.path if omega1 is not None else None)


def solve_sweep(sweep: StabilitySweep, multistart: bool = True) -> StabilitySweep:
    """Fill ``base``, the representative set and one row per term.

    Warm mode walks k = 1..K in order, reusing the previous solution when it
    is still critical and otherwise continuing it by Newton (falling back to
    minimax from the previous path).  Cold
    mode solves every term from the segment path, in parallel.
    """
    st = sweep.settings
    ctx0 = make_context(sweep.K, sweep.N, sweep.u0, sweep.v0)
    base = solve_problem(ctx0, st)
    if not base.converged:
        raise RuntimeError(f"limit problem did not converge: {base.message}")
    reps = [base]
    if multistart:
        for r in critical_set(ctx0, st):
            if all(x0_norm_vec(ctx0, r.w.interior - f.w.interior) > 1e-4 for f in reps):
                reps.append(r)
    sweep.base, sweep.reps = base, [r.w for r in reps]

    def row(term: SequenceTerm, res: MinimaxResult) -> SweepRow:
        return SweepRow(term.k, term.u_dev, term.v_dev, res.c, abs(res.c - base.c),
                        kuratowski_distance(sweep.K, res.w, sweep.reps), res.grad_norm, res.converged, res.w)

    contexts = [make_context(sweep.K, sweep.N, t.u, t.v) for t in sweep.terms]
    if sweep.warm:
        prev = base
        rows = []
        for term, ctx in zip(sweep.terms, contexts):
            if _reusable(ctx, prev, st.tol_grad):
                res = prev
            else:
                res = _continue(ctx, prev, st)
            rows.append(row(term, res))
            if res.converged:
                prev = res
    else:
        results = ordered_map(lambda ctx: solve_problem(ctx, st), contexts, st.workers)
        rows = [row(t, r) for t, r in zip(sweep.terms, results)]
    sweep.rows = rows
    return sweep


def write_sweep(sweep: StabilitySweep, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k", "u_dev_inf", "v_dev_Y", "c_k", "c_gap", "dist_W0", "grad_norm", "converged"])
        for r in sweep.rows:
            wr.writerow([r.k, f"{r.u_dev:.17g}", f"{r.v_dev:.17g}", f"{r.c:.17g}", f"{r.c_gap:.17g}",
                         f"{r.dist:.17g}", f"{r.grad_norm:.17g}", str(r.converged).lower()])
