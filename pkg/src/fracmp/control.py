"""Cost evaluation and search over piecewise-constant and Lipschitz controls.

Every candidate control is evaluated on the deterministic mountain-pass
solution of its state problem; the admissible set is restricted to those.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import make_context
from .kernel import KernelWeights
from .model import (
    Control,
    CostIntegrand,
    Nonlinearity,
    lipschitz_control,
    lipschitz_violation,
    piecewise_control,
)
from .mpt import MPTSettings, solve_problem
from .parallel import ordered_map
from .space import GridFunction


def cost_J(z: GridFunction, u, Phi: CostIntegrand) -> float:
    """Node quadrature of Phi(x, z, u) over the interior."""
    dom = z.domain
    m = dom.n_interior
    uv = u.values if isinstance(u, Control) else np.broadcast_to(np.asarray(u, float), (m,))
    return float(np.dot(dom.quad[:m], Phi.Phi(dom.interior_coords, z.values[:m], uv)))


@dataclass(frozen=True, eq=False)
class ControlProblem:
    K: KernelWeights
    N: Nonlinearity
    v: GridFunction
    Phi: CostIntegrand
    bounds: tuple[float, float]
    settings: MPTSettings = field(default_factory=MPTSettings)


@dataclass(eq=False)
class AdmissiblePair:
    z: GridFunction
    u: Control
    c: float
    residual: float
    J: float


def admissible_solve(problem: ControlProblem, u: Control) -> AdmissiblePair:
    lo, hi = problem.bounds
    if np.any(u.values < lo) or np.any(u.values > hi):
        raise ValueError("control leaves the admissible box")
    ctx = make_context(problem.K, problem.N, u.values, problem.v)
    res = solve_problem(ctx, problem.settings)
    if not res.converged:
        raise RuntimeError(f"state problem did not converge: {res.message}")
    z = res.w + problem.v
    return AdmissiblePair(z, u, res.c, res.grad_norm, cost_J(z, u, problem.Phi))


@dataclass
class Candidate:
    key: tuple
    pair: AdmissiblePair | None
    J: float
    error: str = ""


@dataclass
class SearchResult:
    best: AdmissiblePair
    best_key: tuple
    candidates: list[Candidate]
    mode: str


def _order(c: Candidate):
    return (c.J, c.key)


class _Evaluator:
    """Cached, order-preserving candidate evaluation."""

    def __init__(self, problem: ControlProblem, build):
        self.problem = problem
        self.build = build
        self.cache: dict[tuple, Candidate] = {}
        self.log: list[Candidate] = []

    def _one(self, key):
        try:
            pair = admissible_solve(self.problem, self.build(key))
            return Candidate(key, pair, pair.J)
        except (RuntimeError, ValueError) as exc:
            return Candidate(key, None, math.inf, str(exc))

    def __call__(self, keys) -> list[Candidate]:
        todo = list(dict.fromkeys(k for k in keys if k not in self.cache))
        for cand in ordered_map(self._one, todo, self.problem.settings.workers):
            self.cache[cand.key] = cand
            self.log.append(cand)
        return [self.cache[k] for k in keys]


def _finish(ev: _Evaluator, mode: str) -> SearchResult:
    ok = [c for c in ev.log if c.pair is not None]
    if not ok:
        raise RuntimeError("every candidate control failed to produce an admissible pair")
    best = min(ok, key=_order)
    return SearchResult(best.pair, best.key, ev.log, mode)


def optimize_piecewise(problem: ControlProblem, labels, value_grid, mode: str = "auto",
                       max_exhaustive: int | None = None) -> SearchResult:
    """Minimise J over controls constant on each part.

    ``value_grid`` is one candidate list shared by all parts, or one list per
    part.  ``auto`` enumerates all combinations when there are at most
    ``max_exhaustive`` (default 5^r) and runs coordinate search otherwise.
    Ties in J go to the lexicographically smallest value tuple.
    """
    labels = np.asarray(labels, int)
    r = int(labels.max()) + 1
    grids = [sorted(float(x) for x in g) for g in value_grid] if np.ndim(value_grid[0]) else [sorted(float(x) for x in value_grid)] * r
    if len(grids) != r or any(len(g) == 0 for g in grids):
        raise ValueError("need a nonempty value list for every part")
    lo, hi = problem.bounds
    if any(x < lo or x > hi for g in grids for x in g):
        raise ValueError("value grid leaves U")
    ev = _Evaluator(problem, lambda key: piecewise_control(labels, key, problem.bounds))
    total = math.prod(len(g) for g in grids)
    limit = 5**r if max_exhaustive is None else max_exhaustive
    if mode == "exhaustive" or (mode == "auto" and total <= limit):
        ev(list(itertools.product(*grids)))
        return _finish(ev, "exhaustive")
    if mode not in ("auto", "coordinate"):
        raise ValueError(f"unknown mode {mode!r}")
    # coordinate search from the best constant control on the shared values
    common = sorted(set(grids[0]).intersection(*grids[1:]))
    starts = [tuple([x] * r) for x in common] or [tuple(g[0] for g in grids)]
    current = min(ev(starts), key=_order)
    improved = True
    while improved:
        improved = False
        for part in range(r):
            keys = [current.key[:part] + (x,) + current.key[part + 1:] for x in grids[part]]
            cand = min(ev(keys), key=_order)
            if _order(cand) < _order(current):
                current, improved = cand, True
    return _finish(ev, "coordinate")


def anchor_grid(problem: ControlProblem, per_axis: int) -> np.ndarray:
    """Tensor grid of anchor points at cell centres of the box."""
    axes = [lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis for lo, hi in problem.K.domain.box]
    return np.array(list(itertools.product(*axes)), dtype=float)


def optimize_lipschitz(problem: ControlProblem, lam: float, anchors, constant_values, step: float | None = None,
                       min_step: float | None = None, max_sweeps: int = 50) -> SearchResult:
    """Pattern search over anchor values of a lam-Lipschitz control.

    Starts from the best constant control in ``constant_values`` and tries
    +-step moves per anchor, halving the step when a sweep brings no strict
    improvement.  Anchor values are projected to a feasible Lipschitz set
    before extension, so every candidate passes the pairwise audit.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    anchors = np.atleast_2d(np.asarray(anchors, float))
    lo, hi = problem.bounds
    dom = problem.K.domain

    def build(key):
        return lipschitz_control(dom, anchors, np.array(key), lam, problem.bounds)

    ev = _Evaluator(problem, build)
    a = len(anchors)
    starts = [tuple([float(x)] * a) for x in sorted(constant_values)]
    current = min(ev(starts), key=_order)
    if current.pair is None:
        raise RuntimeError("no constant control produced an admissible pair")
    step = 0.25 * (hi - lo) if step is None else step
    min_step = 1e-3 * (hi - lo) if min_step is None else min_step
    for _ in range(max_sweeps):
        if step < min_step:
            break
        improved = False
        for i in range(a):
            keys = []
            for sgn in (-1.0, 1.0):
                vals = list(current.key)
                vals[i] = float(np.clip(vals[i] + sgn * step, lo, hi))
                keys.append(tuple(vals))
            cand = min(ev(keys), key=_order)
            if _order(cand) < _order(current):
                current, improved = cand, True
        if not improved:
            step *= 0.5
    res = _finish(ev, "pattern")
    if lipschitz_violation(res.best.u.values, dom.interior_coords, lam) is not None:
        raise RuntimeError("returned control fails the Lipschitz audit")
    return res


def write_candidates(result: SearchResult, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["candidate", "control_values", "c_star", "J", "residual"])
        for i, cand in enumerate(result.candidates):
            vals = " ".join(f"{x:.17g}" for x in cand.key)
            if cand.pair is None:
                wr.writerow([i, vals, "nan", "inf", "nan"])
            else:
                p = cand.pair
                wr.writerow([i, vals, f"{p.c:.17g}", f"{p.J:.17g}", f"{p.residual:.17g}"])
