"""Mountain-pass machinery on the shifted functional F_k.

Paths are arrays of shape (P+1, m) holding interior coordinates; node 0 is
the origin and node P the far point omega_1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .energy import EnergyContext, jacobian, shifted_gradient, shifted_value
from .parallel import ordered_map
from .space import GridFunction, extend_by_zero

MAX_SCALE = 2.0**40


@dataclass(frozen=True)
class MPTSettings:
    eta: float = 0.05
    P: int = 32
    tol_grad: float = 1e-8
    tol_val: float = 1e-8
    max_iter: int = 2000
    switch_rel: float = 1e-3
    sample_count: int = 200
    seed: int = 0
    workers: int = 1
    refine_max_iter: int = 60

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.P < 8:
            raise ValueError("paths need P >= 8 segments")
        if not self.tol_grad > 0:
            raise ValueError("tol_grad must be positive")


@dataclass
class GeometryReport:
    eta: float
    sphere_inf: float
    F_omega1: float
    F_zero: float
    passed: bool
    omega1: np.ndarray = field(repr=False)


@dataclass
class MinimaxResult:
    w: GridFunction
    c: float
    grad_norm: float
    geometry: GeometryReport | None
    iterations: int
    converged: bool
    path: np.ndarray = field(repr=False)
    trace: list = field(default_factory=list, repr=False)
    iterates: list = field(default_factory=list, repr=False)
    message: str = ""


# ---------------------------------------------------------------- norms


def x0_norm_vec(ctx: EnergyContext, w: np.ndarray) -> float:
    return math.sqrt(max(float(np.dot(w, ctx.K.stiffness @ w)), 0.0))


def y_norm_vec(ctx: EnergyContext, w: np.ndarray) -> float:
    return math.sqrt(float(np.dot(ctx.quad * w, w))) + x0_norm_vec(ctx, w)


# ---------------------------------------------------------------- geometry


def find_far_point(ctx: EnergyContext, direction, eta: float) -> np.ndarray:
    """Point ``l0 * w/|w|_Y`` on the ray with F_k < 0 and Y-norm >= eta.

    The scale is doubled from eta until F_k turns negative and then bisected
    to relative width 1e-3; the negative end of the bracket is returned.
    """
    w = direction.interior if isinstance(direction, GridFunction) else np.asarray(direction, float)
    nw = y_norm_vec(ctx, w)
    if nw == 0.0:
        raise ValueError("direction must be nonzero")
    if shifted_value(ctx, w) < 0 and nw >= eta:
        return w.copy()
    d = w / nw
    lo, hi = 0.0, float(eta)
    while shifted_value(ctx, hi * d) >= 0:
        lo, hi = hi, 2 * hi
        if hi > MAX_SCALE:
            raise RuntimeError("F_k stays nonnegative up to scale 2^40: model is not superlinear on this grid")
    lo = max(lo, eta)
    while hi - lo > 1e-3 * hi:
        mid = 0.5 * (lo + hi)
        if shifted_value(ctx, mid * d) < 0:
            hi = mid
        else:
            lo = mid
    return hi * d


def sphere_directions(ctx: EnergyContext, count: int, seed: int) -> np.ndarray:
    """Seeded random directions plus the constant one, unnormalised."""
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((max(count - 1, 0), ctx.m))
    return np.vstack([np.ones((1, ctx.m)), dirs])


def verify_geometry(ctx: EnergyContext, eta: float, sample_count: int = 200, seed: int = 0,
                    omega1=None, direction=None, workers: int = 1) -> GeometryReport:
    if not eta > 0:
        raise ValueError("eta must be positive")
    dirs = sphere_directions(ctx, sample_count, seed)

    def on_sphere(d):
        return shifted_value(ctx, eta * d / y_norm_vec(ctx, d))

    vals = ordered_map(on_sphere, dirs, workers)
    inf = float(min(vals))
    if omega1 is None:
        omega1 = find_far_point(ctx, np.ones(ctx.m) if direction is None else direction, eta)
    omega1 = omega1.interior if isinstance(omega1, GridFunction) else np.asarray(omega1, float)
    f1 = shifted_value(ctx, omega1)
    f0 = shifted_value(ctx, np.zeros(ctx.m))
    passed = inf > 0 and f1 < 0 and f0 == 0.0
    return GeometryReport(float(eta), inf, f1, f0, bool(passed), omega1)


# ---------------------------------------------------------------- minimax


def _respread(ctx: EnergyContext, path: np.ndarray) -> np.ndarray:
    """Redistribute nodes at equal X_0 arc length; endpoints are copied."""
    S = ctx.K.stiffness
    seg = np.diff(path, axis=0)
    lens = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", seg, S, seg), 0.0))
    s = np.concatenate([[0.0], np.cumsum(lens)])
    if s[-1] == 0.0:
        return path.copy()
    target = np.linspace(0.0, s[-1], len(path))
    out = np.empty_like(path)
    idx = np.clip(np.searchsorted(s, target, side="right") - 1, 0, len(path) - 2)
    for j, (t, i) in enumerate(zip(target, idx)):
        frac = 0.0 if lens[i] == 0 else (t - s[i]) / lens[i]
        out[j] = path[i] + min(max(frac, 0.0), 1.0) * seg[i]
    out[0] = path[0]
    out[-1] = path[-1]
    return out


def ray_maximum(ctx: EnergyContext, g: np.ndarray) -> np.ndarray:
    """Point of largest F_k on the ray {t g : t > 0}.

    Brackets a sign change of t -> <F_k'(t g), g> around t = 1 and solves it
    by Brent's method; returns ``g`` unchanged if no interior maximum is
    bracketed.
    """
    def slope(t):
        return float(np.dot(shifted_gradient(ctx, t * g), g))

    hi = 1.0
    while slope(hi) > 0:
        hi *= 2.0
        if hi > MAX_SCALE:
            return g
    lo = hi
    while slope(lo) <= 0:
        lo *= 0.5
        if lo < 1e-12:
            return g
    if lo == hi:
        return g
    t = scipy.optimize.brentq(slope, lo, hi, xtol=1e-14, rtol=1e-12)
    return t * g


def minimax_solve(ctx: EnergyContext, omega1, P: int = 32, tol_grad: float = 1e-8, max_iter: int = 2000,
                  tol_val: float = 1e-8, switch_rel: float = 1e-3, init_path: np.ndarray | None = None,
                  workers: int = 1, refine_max_iter: int = 60, geometry: GeometryReport | None = None,
                  patience: int = 50) -> MinimaxResult:
    """Deform the segment path [0, omega_1] by descending its highest node.

    Each iteration moves the highest interior node (lowest index on ties)
    along the X_0-Riesz representative of -F_k' with the component along the
    path removed, capped at half the adjacent node spacing and backtracked
    Armijo-style.  Nodes are then re-spread at equal X_0 arc length if that
    does not raise the path maximum.  Descent stops once the gradient at the
    highest node has dropped by ``switch_rel`` or has not improved for
    ``patience`` iterations.  The best highest-node iterate then seeds a
    descent over ray maxima (``_ray_descent``) and finally damped Newton.
    """
    if P < 8:
        raise ValueError("paths need P >= 8 segments")
    omega1 = omega1.interior if isinstance(omega1, GridFunction) else np.asarray(omega1, float)
    m = ctx.m
    if init_path is None:
        path = np.linspace(0.0, 1.0, P + 1)[:, None] * omega1[None, :]
    else:
        path = np.array(init_path, dtype=float)
        if path.shape != (P + 1, m):
            raise ValueError("initial path has the wrong shape")
    path[0] = 0.0
    path[-1] = omega1

    cS = scipy.linalg.cho_factor(ctx.c * ctx.K.stiffness)
    energies = np.array(ordered_map(lambda g: shifted_value(ctx, g), path, workers))
    trace, iterates = [], []
    gn0 = None
    best_gn, best_w, stall = math.inf, None, 0
    it = 0
    j = 1
    for it in range(1, max_iter + 1):
        j = 1 + int(np.argmax(energies[1:-1]))
        g = path[j]
        r = shifted_gradient(ctx, g)
        gn = float(np.linalg.norm(r))
        trace.append((it, j / P, float(energies.max()), gn))
        iterates.append((g.copy(), float(energies[j]), gn))
        gn0 = gn if gn0 is None else gn0
        if gn < best_gn:
            best_gn, best_w, stall = gn, g.copy(), 0
        else:
            stall += 1
        if gn <= max(tol_grad, switch_rel * gn0) or stall >= patience:
            break
        d = scipy.linalg.cho_solve(cS, r)
        # drop the component along the path so the node does not slide along it
        tang = path[j + 1] - path[j - 1]
        St = ctx.K.stiffness @ tang
        d = d - (np.dot(d, St) / np.dot(tang, St)) * tang
        slope = float(np.dot(r, d))
        # cap the move at half the adjacent spacing
        spacing = min(x0_norm_vec(ctx, path[j] - path[j - 1]), x0_norm_vec(ctx, path[j + 1] - path[j]))
        tau, f = min(1.0, 0.5 * spacing / max(x0_norm_vec(ctx, d), 1e-300)), energies[j]
        for _ in range(50):
            trial = g - tau * d
            ft = shifted_value(ctx, trial)
            if ft <= f - 1e-4 * tau * slope:
                break
            tau *= 0.5
        else:
            break
        path[j] = trial
        energies[j] = ft
        spread = _respread(ctx, path)
        e_spread = np.array(ordered_map(lambda q: shifted_value(ctx, q), spread, workers))
        if e_spread[1:-1].max() <= energies[1:-1].max():
            path, energies = spread, e_spread
    else:
        it = max_iter

    start = best_w if best_w is not None else path[1 + int(np.argmax(energies[1:-1]))]
    start, lmm_log = _ray_descent(ctx, start, cS, tol_grad, switch_rel, max_iter)
    iterates.extend(lmm_log)
    try:
        w, gn, refine_log = _refine(ctx, start, tol_grad, refine_max_iter)
    except RuntimeError as exc:
        w, gn, refine_log = start, float(np.linalg.norm(shifted_gradient(ctx, start))), []
        msg = str(exc)
    else:
        msg = ""
    iterates.extend(refine_log)
    if not msg and gn <= tol_grad:
        w, gn, escape_log = _escape_saddles(ctx, w, cS, tol_grad, switch_rel, max_iter, refine_max_iter)
        iterates.extend(escape_log)
    c = shifted_value(ctx, w)
    nonzero = x0_norm_vec(ctx, w) > 1e-8 * max(1.0, x0_norm_vec(ctx, omega1))
    converged = gn <= tol_grad and c > max(0.0, shifted_value(ctx, omega1)) and nonzero
    if not converged and not msg:
        if gn > tol_grad:
            msg = "refinement did not reach tol_grad"
        else:
            msg = "critical point is trivial or below the endpoint levels"
    return MinimaxResult(extend_by_zero(w, ctx.K.domain), float(c), float(gn), geometry, it, bool(converged),
                         path, trace, iterates, msg)


def _ray_descent(ctx, g0, cS, tol_grad, switch_rel, max_iter):
    """Descent of F_k over ray maxima: step along -F_k' (Riesz), lift to the
    ray maximum, Armijo on the lifted value.  Every iterate sits on the
    ridge, so the sequence cannot fall through the pass.  Stops once the
    gradient is ``switch_rel`` below its running maximum."""
    g = ray_maximum(ctx, g0)
    f = shifted_value(ctx, g)
    log, peak = [], 0.0
    for _ in range(max_iter):
        r = shifted_gradient(ctx, g)
        gn = float(np.linalg.norm(r))
        log.append((g.copy(), f, gn))
        peak = max(peak, gn)
        if gn <= max(tol_grad, switch_rel * peak):
            break
        d = scipy.linalg.cho_solve(cS, r)
        slope = float(np.dot(r, d))
        tau = min(1.0, 0.5 * x0_norm_vec(ctx, g) / max(x0_norm_vec(ctx, d), 1e-300))
        for _ in range(50):
            trial = ray_maximum(ctx, g - tau * d)
            ft = shifted_value(ctx, trial)
            if ft <= f - 1e-4 * tau * slope:
                break
            tau *= 0.5
        else:
            break
        g, f = trial, ft
    return g, log


def morse_index(ctx: EnergyContext, w: np.ndarray, rtol: float = 1e-9) -> tuple[int, np.ndarray, np.ndarray]:
    """Number of negative eigenvalues of F_k''(w) relative to c S, with the
    eigenpairs (ascending)."""
    cS = ctx.c * ctx.K.stiffness
    lam, vec = scipy.linalg.eigh(jacobian(ctx, w), cS)
    return int(np.sum(lam < -rtol)), lam, vec


def _escape_saddles(ctx, w, cS, tol_grad, switch_rel, max_iter, refine_max_iter, max_escapes=8, kick=0.05):
    """Leave critical points of Morse index > 1.

    A mountain-pass point of a superlinear functional minimises the ray
    maximum, so its Hessian has one negative direction.  With more, the
    point is pushed along the second negative eigenvector (both signs),
    lifted by ray-maximum descent and refined; the lower converged level
    replaces the current point.  Symmetric starting paths otherwise stay
    trapped in the symmetric subspace.
    """
    log = []
    gn = float(np.linalg.norm(shifted_gradient(ctx, w)))
    f = shifted_value(ctx, w)
    for _ in range(max_escapes):
        index, lam, vec = morse_index(ctx, w)
        if index <= 1:
            break
        e = vec[:, 1] / x0_norm_vec(ctx, vec[:, 1])
        size = kick * x0_norm_vec(ctx, w)
        best = None
        for sgn in (1.0, -1.0):
            start, lmm_log = _ray_descent(ctx, w + sgn * size * e, cS, tol_grad, switch_rel, max_iter)
            try:
                cand, cgn, rlog = _refine(ctx, start, tol_grad, refine_max_iter)
            except RuntimeError:
                continue
            fc = shifted_value(ctx, cand)
            if cgn <= tol_grad and x0_norm_vec(ctx, cand) > 0 and fc < f - 1e-12 * max(1.0, abs(f)):
                if best is None or fc < best[1]:
                    best = (cand, fc, cgn, lmm_log + rlog)
        if best is None:
            break
        w, f, gn = best[0], best[1], best[2]
        log.extend(best[3])
    return w, gn, log


def _refine(ctx: EnergyContext, w0: np.ndarray, tol_grad: float, max_iter: int, energy_floor: float = -1e12):
    """Damped Newton on F_k' = 0; returns (w, |F_k'(w)|, iterate log)."""
    w = np.array(w0, dtype=float)
    r = shifted_gradient(ctx, w)
    gn = float(np.linalg.norm(r))
    log = [(w.copy(), shifted_value(ctx, w), gn)]
    for _ in range(max_iter):
        if gn <= tol_grad:
            break
        try:
            step = scipy.linalg.solve(jacobian(ctx, w), r, assume_a="sym")
        except (np.linalg.LinAlgError, ValueError):
            break
        tau = 1.0
        for _ in range(40):
            trial = w - tau * step
            rt = shifted_gradient(ctx, trial)
            gt = float(np.linalg.norm(rt))
            if gt < (1 - 1e-4 * tau) * gn:
                break
            tau *= 0.5
        else:
            break
        w, r, gn = trial, rt, gt
        fw = shifted_value(ctx, w)
        if fw < energy_floor:
            raise RuntimeError("refinement diverged below the energy floor")
        log.append((w.copy(), fw, gn))
    return w, gn, log


def refine_critical(ctx: EnergyContext, w0, tol_grad: float = 1e-8, max_iter: int = 60,
                    energy_floor: float = -1e12) -> tuple[GridFunction, float]:
    if not tol_grad > 0:
        raise ValueError("tol_grad must be positive")
    w0 = w0.interior if isinstance(w0, GridFunction) else np.asarray(w0, float)
    w, gn, _ = _refine(ctx, w0, tol_grad, max_iter, energy_floor)
    return extend_by_zero(w, ctx.K.domain), gn


def solve_problem(ctx: EnergyContext, settings: MPTSettings, direction=None, init_path=None) -> MinimaxResult:
    """Geometry check, far point along ``direction`` (default: constant), minimax."""
    geo = verify_geometry(ctx, settings.eta, settings.sample_count, settings.seed,
                          direction=direction, workers=settings.workers)
    if not geo.passed:
        zero = extend_by_zero(np.zeros(ctx.m), ctx.K.domain)
        return MinimaxResult(zero, 0.0, math.inf, geo, 0, False, np.zeros((settings.P + 1, ctx.m)),
                             message="mountain-pass geometry not verified")
    return minimax_solve(ctx, geo.omega1, settings.P, settings.tol_grad, settings.max_iter, settings.tol_val,
                         settings.switch_rel, init_path, settings.workers, settings.refine_max_iter, geo)


def write_trace(result: MinimaxResult, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iter", "t_star", "path_max_energy", "grad_norm"])
        for it, t, e, g in result.trace:
            wr.writerow([it, f"{t:.17g}", f"{e:.17g}", f"{g:.17g}"])


# ---------------------------------------------------------------- diagnostics


@dataclass
class PalaisSmaleReport:
    bounded: bool
    vanishing: bool
    is_ps: bool
    tail_spread: float
    tail_length: int


def palais_smale_diagnostic(ctx: EnergyContext, iterates, energies=None, grad_norms=None, tail: int = 5,
                            energy_bound: float = 1e8, grad_tol: float = 1e-6) -> PalaisSmaleReport:
    """Check bounded energies and vanishing gradients; report the X_0 diameter
    of the last ``tail`` iterates (small = numerically compact)."""
    ws = [w.interior if isinstance(w, GridFunction) else np.asarray(w, float) for w in iterates]
    if not ws:
        raise ValueError("empty iterate sequence")
    if energies is None:
        energies = [shifted_value(ctx, w) for w in ws]
    if grad_norms is None:
        grad_norms = [float(np.linalg.norm(shifted_gradient(ctx, w))) for w in ws]
    energies = np.asarray(energies, float)
    grad_norms = np.asarray(grad_norms, float)
    bounded = bool(np.all(np.isfinite(energies)) and np.max(np.abs(energies)) <= energy_bound)
    k = min(tail, len(ws))
    vanishing = bool(grad_norms[-1] <= grad_tol and grad_norms[-1] <= grad_norms[-k])
    tw = ws[-k:]
    spread = max((x0_norm_vec(ctx, a - b) for a in tw for b in tw), default=0.0)
    return PalaisSmaleReport(bounded, vanishing, bounded and vanishing, float(spread), k)


@dataclass
class BallReport:
    rho: float
    norm: float
    inside: bool
    D1: float
    D2: float


def apriori_ball_check(ctx: EnergyContext, w_star, p: float, c_bar: float, R: float | None = None,
                       nz: int = 201) -> BallReport:
    """Radius bound for critical points at level <= c_bar.

    From p F_k(w) - <F_k'(w), w> at a critical point,
        p c_bar >= c (p-2)/2 [w]^2 - D1 [w] - D2
    with D1 = c (p-1) [v] and
        D2 = |Omega| max(0, -m_R) - p int G(v) + |int G_z(w*+v) v|,
    where m_R is the sampled minimum of z G_z - p G over |z| < R (the sign
    of z G_z - p G beyond R is fixed by (C3)).  The last term of D2 is
    evaluated at the candidate itself.
    """
    if p <= 2:
        raise ValueError("p must exceed 2")
    w = w_star.interior if isinstance(w_star, GridFunction) else np.asarray(w_star, float)
    c = ctx.c
    N = ctx.N
    R = N.R if R is None else R
    if R is None:
        raise ValueError("threshold R is required")
    vnorm = math.sqrt(max(ctx.vBv, 0.0))
    zs = np.linspace(-R, R, nz)
    x = np.repeat(ctx.x, nz, axis=0)
    zz = np.tile(zs, ctx.m)
    uu = np.repeat(ctx.u, nz)
    m_R = float(np.min(zz * N.Gz(x, zz, uu) - p * N.G(x, zz, uu)))
    vol = float(ctx.quad.sum())
    cross = abs(float(np.dot(ctx.quad * N.Gz(ctx.x, w + ctx.v_int, ctx.u), ctx.v_int)))
    A = c * (p - 2) / 2
    D1 = c * (p - 1) * vnorm
    D2 = max(0.0, vol * max(0.0, -m_R) - p * ctx.int_Gv + cross)
    rho = (D1 + math.sqrt(D1 * D1 + 4 * A * (D2 + p * c_bar))) / (2 * A)
    nrm = x0_norm_vec(ctx, w)
    return BallReport(float(rho), float(nrm), bool(nrm <= rho), float(D1), float(D2))
