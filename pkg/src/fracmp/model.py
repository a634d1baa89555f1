"""Nonlinearities, controls, boundary data, cost integrands and sampled
checks of the structural conditions (C1)-(C7).

Evaluators are vectorised: ``G(x, z, u)`` takes node coordinates ``x`` of
shape (k, n) and arrays ``z``, ``u`` of shape (k,) (or broadcastable).
Controls are scalar-valued (m = 1).
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .space import GridFunction, SpatialDomain

Evaluator = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def critical_exponent(n: int, alpha: float) -> float:
    return 2 * n / (n - alpha)


@dataclass(frozen=True)
class Nonlinearity:
    G: Evaluator
    Gz: Evaluator
    s: float
    p: float
    a: float | None = None
    R: float | None = None
    b: float | None = None
    zeta: float | None = None
    name: str = "custom"

    def with_constants(self, **kw) -> Nonlinearity:
        return dataclasses.replace(self, **kw)


def _spow(z, e):
    """Signed power sign(z)|z|^e."""
    return np.sign(z) * np.abs(z) ** e


def example_nonlinearity(gamma: float) -> Nonlinearity:
    """G = |z|^(7/2) - (gamma/2) u z^2 - u |z|^(5/2) sin^2|x| (even extension)."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")

    def sin2(x):
        return np.sin(np.linalg.norm(np.atleast_2d(x), axis=-1)) ** 2

    def G(x, z, u):
        z = np.asarray(z, dtype=float)
        return np.abs(z) ** 3.5 - 0.5 * gamma * u * z**2 - u * np.abs(z) ** 2.5 * sin2(x)

    def Gz(x, z, u):
        z = np.asarray(z, dtype=float)
        return 3.5 * _spow(z, 2.5) - gamma * u * z - 2.5 * u * _spow(z, 1.5) * sin2(x)

    return Nonlinearity(G, Gz, s=3.5, p=3.5, name=f"example(gamma={gamma:g})")


def power_nonlinearity(p: float) -> Nonlinearity:
    """G = |z|^p / p; (C3) holds with equality zG_z = pG."""

    def G(x, z, u):
        return np.abs(np.asarray(z, dtype=float)) ** p / p

    def Gz(x, z, u):
        return _spow(np.asarray(z, dtype=float), p - 1)

    return Nonlinearity(G, Gz, s=p, p=p, a=None, R=1.0, name=f"power(p={p:g})")


def quadratic_nonlinearity(coef: float, forcing: float = 0.0) -> Nonlinearity:
    """G = (coef/2) z^2 + forcing * z; the Euler-Lagrange system is linear."""

    def G(x, z, u):
        z = np.asarray(z, dtype=float)
        return 0.5 * coef * z**2 + forcing * z

    def Gz(x, z, u):
        return coef * np.asarray(z, dtype=float) + forcing

    return Nonlinearity(G, Gz, s=2.0, p=2.0, name=f"quadratic(coef={coef:g})")


def tabulated_nonlinearity(z_grid, u_grid, g_table, gz_table=None, s: float = 3.0, p: float = 3.0) -> Nonlinearity:
    """Bilinear interpolation of G (and G_z) tabulated on a (z, u) grid.

    Without ``gz_table`` the z-derivative is taken from the table by
    second-order differences and interpolated the same way.
    """
    z_grid = np.asarray(z_grid, float)
    u_grid = np.asarray(u_grid, float)
    g_table = np.asarray(g_table, float)
    if gz_table is None:
        gz_table = np.gradient(g_table, z_grid, axis=0, edge_order=2)
    gi = RegularGridInterpolator((z_grid, u_grid), g_table)
    gzi = RegularGridInterpolator((z_grid, u_grid), np.asarray(gz_table, float))

    def _pts(z, u):
        z, u = np.broadcast_arrays(np.asarray(z, float), np.asarray(u, float))
        return np.stack([z.ravel(), u.ravel()], axis=-1), z.shape

    def G(x, z, u):
        pts, shape = _pts(z, u)
        return gi(pts).reshape(shape)

    def Gz(x, z, u):
        pts, shape = _pts(z, u)
        return gzi(pts).reshape(shape)

    return Nonlinearity(G, Gz, s=s, p=p, name="table")


# ---------------------------------------------------------------- samples


@dataclass(frozen=True)
class ConditionSample:
    """Tensor sample of (x, z, u): every node against every z and u value."""

    x: np.ndarray
    z: np.ndarray
    u: np.ndarray

    def points(self, z: np.ndarray | None = None, u: np.ndarray | None = None):
        z = self.z if z is None else np.asarray(z, float)
        u = self.u if u is None else np.asarray(u, float)
        nx, nz, nu = len(self.x), len(z), len(u)
        X = np.repeat(self.x, nz * nu, axis=0)
        Z = np.tile(np.repeat(z, nu), nx)
        U = np.tile(u, nx * nz)
        return X, Z, U


def make_sample(x, z_max: float, u_values, nz: int = 201) -> ConditionSample:
    z = np.linspace(-z_max, z_max, nz)
    return ConditionSample(np.atleast_2d(np.asarray(x, float)), z, np.atleast_1d(np.asarray(u_values, float)))


@dataclass
class ConditionReport:
    name: str
    holds: bool
    c_fit: float | None = None
    witness: tuple | None = None
    info: dict = field(default_factory=dict)


def _witness(X, Z, U, idx):
    return (tuple(np.atleast_1d(X[idx]).tolist()), float(Z[idx]), float(U[idx]))


def check_C1(N: Nonlinearity, sample: ConditionSample, step: float = 1e-5, rtol: float = 1e-6) -> ConditionReport:
    """Finite evaluations and G_z consistent with central differences of G."""
    X, Z, U = sample.points()
    g = N.G(X, Z, U)
    gz = N.Gz(X, Z, U)
    fd = (N.G(X, Z + step, U) - N.G(X, Z - step, U)) / (2 * step)
    err = np.abs(fd - gz) / np.maximum(1.0, np.abs(gz))
    finite = np.isfinite(g) & np.isfinite(gz)
    bad = ~finite | (err > rtol)
    rep = ConditionReport("C1", not bad.any(), info={"max_fd_rel_err": float(np.nanmax(err))})
    if bad.any():
        rep.witness = _witness(X, Z, U, int(np.flatnonzero(bad)[0]))
    return rep


def check_C2(N: Nonlinearity, sample: ConditionSample, n: int | None = None, alpha: float | None = None) -> ConditionReport:
    """Smallest c with |G| <= c(1+|z|^s) and |G_z| <= c(1+|z|^(s-1)) on the sample."""
    X, Z, U = sample.points()
    az = np.abs(Z)
    rg = np.abs(N.G(X, Z, U)) / (1 + az**N.s)
    rgz = np.abs(N.Gz(X, Z, U)) / (1 + az ** (N.s - 1))
    c_g, c_gz = float(rg.max()), float(rgz.max())
    violations = []
    if not (np.isfinite(c_g) and np.isfinite(c_gz)):
        violations.append("non-finite growth ratio")
    if N.s <= 2:
        violations.append(f"s = {N.s} is not superquadratic")
    if n is not None and alpha is not None and N.s >= critical_exponent(n, alpha):
        violations.append(f"s = {N.s} is not below 2n/(n-alpha) = {critical_exponent(n, alpha):.6g}")
    return ConditionReport(
        "C2", not violations, c_fit=max(c_g, c_gz), info={"c_G": c_g, "c_Gz": c_gz, "violations": violations}
    )


def check_C3(N: Nonlinearity, sample: ConditionSample) -> ConditionReport:
    """a < p G <= z G_z on sampled |z| >= R with the declared (p, a, R)."""
    if N.R is None or N.a is None:
        raise ValueError("C3 needs declared constants a and R")
    X, Z, U = sample.points()
    keep = np.abs(Z) >= N.R
    if not keep.any():
        raise ValueError("sample has no |z| >= R")
    X, Z, U = X[keep], Z[keep], U[keep]
    pg = N.p * N.G(X, Z, U)
    zgz = Z * N.Gz(X, Z, U)
    slack = 1e-12 * np.maximum(1.0, np.abs(zgz))
    bad = ~(N.a < pg) | (pg > zgz + slack)
    rep = ConditionReport(
        "C3",
        not bad.any(),
        info={"min_pG": float(pg.min()), "min_margin": float((zgz - pg).min())},
    )
    if bad.any():
        rep.witness = _witness(X, Z, U, int(np.flatnonzero(bad)[0]))
    return rep


def check_C4(N: Nonlinearity, v0, c_nalpha: float, sample: ConditionSample, nz: int = 201) -> ConditionReport:
    """Smallest b with |G + (c/2) z^2| <= (b/2)|z - v0|^2 on |z| <= zeta.

    ``v0`` holds one value per sampled node.  Holds iff b < c/2.
    """
    zeta = N.zeta
    if zeta is None:
        raise ValueError("C4 needs a declared zeta")
    v0 = np.broadcast_to(np.asarray(v0, float), (len(sample.x),))
    if np.max(np.abs(v0)) >= zeta:
        raise ValueError("ess sup |v0| must be below zeta")
    z = np.linspace(-zeta, zeta, nz)
    X, Z, U = sample.points(z=z)
    V = np.repeat(v0, len(z) * len(sample.u))
    lhs = np.abs(N.G(X, Z, U) + 0.5 * c_nalpha * Z**2)
    d2 = (Z - V) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d2 > 0, 2 * lhs / d2, np.where(lhs > 0, np.inf, 0.0))
    b_fit = float(ratio.max())
    rep = ConditionReport("C4", b_fit < 0.5 * c_nalpha, c_fit=b_fit, info={"zeta": zeta, "c/2": float(0.5 * c_nalpha)})
    if not rep.holds:
        rep.witness = _witness(X, Z, U, int(np.argmax(ratio)))
    return rep


def check_C5(N: Nonlinearity, u0: float, eps: float, sample: ConditionSample, nu: int = 9) -> ConditionReport:
    """Sampled Lipschitz-in-u constants of G and G_z around u0."""
    us = np.linspace(u0 - eps, u0 + eps, nu)[1:-1] if nu > 2 else np.array([u0])
    X, Z, _ = sample.points(u=np.zeros(1))
    az = np.abs(Z)
    c_g = c_gz = 0.0
    for u1, u2 in itertools.combinations(us, 2):
        du = abs(u1 - u2)
        dg = np.abs(N.G(X, Z, u1) - N.G(X, Z, u2)) / ((1 + az**2) * du)
        dgz = np.abs(N.Gz(X, Z, u1) - N.Gz(X, Z, u2)) / ((1 + az) * du)
        c_g = max(c_g, float(dg.max()))
        c_gz = max(c_gz, float(dgz.max()))
    c = max(c_g, c_gz)
    return ConditionReport("C5", bool(np.isfinite(c)), c_fit=c, info={"c_G": c_g, "c_Gz": c_gz, "z_max": float(az.max())})


@dataclass(frozen=True)
class CostIntegrand:
    Phi: Evaluator
    s: float = 2.0
    name: str = "custom"


def check_C7(Phi: CostIntegrand, sample: ConditionSample, n: int | None = None, alpha: float | None = None) -> ConditionReport:
    X, Z, U = sample.points()
    vals = Phi.Phi(X, Z, U)
    c = float(np.max(np.abs(vals) / (1 + np.abs(Z) ** Phi.s)))
    violations = []
    if not np.isfinite(c):
        violations.append("non-finite cost values")
    if Phi.s < 1:
        violations.append("s must be >= 1")
    if n is not None and alpha is not None and Phi.s >= critical_exponent(n, alpha):
        violations.append("s is not below the critical exponent")
    return ConditionReport("C7", not violations, c_fit=c, info={"violations": violations})


@dataclass(frozen=True)
class StarConstants:
    a0: float
    a1: float
    b: float
    a2: float
    feasible: bool


def estimate_star_constants(N: Nonlinearity, sample: ConditionSample, c_nalpha: float, v0=0.0) -> StarConstants:
    """Feasible (a0, a1) for G >= a0|z|^p - a1 and (b, a2) for
    |G + (c/2)z^2| <= (b/2)|z - v0|^2 + a2|z - v0|^s on the sample.

    a0 is the smallest ratio G/|z|^p on the outer band |z| >= max(R, 0.9
    z_max), which approaches the asymptotic growth rate; b comes from the
    (C4) fit; a1 and a2 are then the tightest values the sample allows.
    """
    X, Z, U = sample.points()
    g = N.G(X, Z, U)
    az = np.abs(Z)
    R = N.R if N.R is not None else 0.5 * az.max()
    far = az >= max(R, 0.9 * az.max())
    a0 = float(np.min(g[far] / az[far] ** N.p)) if far.any() else 0.0
    a1 = float(max(0.0, np.max(a0 * az**N.p - g)))
    V = np.repeat(np.broadcast_to(np.asarray(v0, float), (len(sample.x),)), len(sample.z) * len(sample.u))
    if N.zeta is not None:
        b = check_C4(N, np.broadcast_to(np.asarray(v0, float), (len(sample.x),)), c_nalpha, sample).c_fit
    else:
        b = 0.0
    d = np.abs(Z - V)
    excess = np.maximum(np.abs(g + 0.5 * c_nalpha * Z**2) - 0.5 * b * d**2, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(d > 0, excess / d**N.s, np.where(excess > 0, np.inf, 0.0))
    a2 = float(need.max())
    feasible = a0 > 0 and np.isfinite(a1) and np.isfinite(a2) and np.isfinite(b)
    return StarConstants(a0, a1, float(b), a2, bool(feasible))


def star_feasible(N: Nonlinearity, sample: ConditionSample, c_nalpha: float, a0, a1, b, a2, v0=0.0) -> bool:
    X, Z, U = sample.points()
    g = N.G(X, Z, U)
    V = np.repeat(np.broadcast_to(np.asarray(v0, float), (len(sample.x),)), len(sample.z) * len(sample.u))
    d = np.abs(Z - V)
    tol = 1e-12 * np.maximum(1.0, np.abs(g))
    lower = np.all(g >= a0 * np.abs(Z) ** N.p - a1 - tol)
    upper = np.all(np.abs(g + 0.5 * c_nalpha * Z**2) <= 0.5 * b * d**2 + a2 * d**N.s + tol)
    return bool(a0 > 0 and lower and upper)


def calibrate(N: Nonlinearity, sample: ConditionSample, c_nalpha: float, zeta: float, v0=0.0) -> Nonlinearity:
    """Fill R, a from the (C3) sample and b from the (C4) fit at ``zeta``.

    R is the smallest sampled |z| from which p G stays positive; a is half
    the smallest p G beyond it.
    """
    X, Z, U = sample.points()
    pg = N.p * N.G(X, Z, U)
    zgz = Z * N.Gz(X, Z, U)
    levels = np.unique(np.abs(sample.z))
    R = None
    for r in levels[levels > 0]:
        far = np.abs(Z) >= r
        if pg[far].min() > 0 and np.all(pg[far] <= zgz[far] + 1e-12 * np.maximum(1, np.abs(zgz[far]))):
            R = float(r)
            break
    if R is None:
        raise ValueError("no threshold R found on the sample: model is not superlinear there")
    a = 0.5 * float(pg[np.abs(Z) >= R].min())
    out = N.with_constants(R=R, a=a, zeta=zeta)
    b = check_C4(out, np.broadcast_to(np.asarray(v0, float), (len(sample.x),)), c_nalpha, sample).c_fit
    return out.with_constants(b=b)


# ---------------------------------------------------------------- controls


@dataclass(frozen=True, eq=False)
class Control:
    """Scalar control on interior nodes with values in the box ``bounds``."""

    values: np.ndarray
    bounds: tuple[float, float]
    kind: str = "generic"
    l2: float = math.inf
    lam: float | None = None
    parts: np.ndarray | None = None
    coords: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, float)
        object.__setattr__(self, "values", v)
        lo, hi = self.bounds
        if np.any(v < lo) or np.any(v > hi):
            raise ValueError("control values leave U")
        if np.max(np.abs(v), initial=0.0) > self.l2:
            raise ValueError("control exceeds the sup bound l2")
        if self.kind == "piecewise":
            if self.parts is None or len(self.parts) != len(v):
                raise ValueError("piecewise control needs one part label per node")
            for lab in np.unique(self.parts):
                if np.ptp(v[self.parts == lab]) != 0.0:
                    raise ValueError("piecewise control is not constant on a part")
        if self.kind == "lipschitz":
            if self.lam is None or self.coords is None:
                raise ValueError("lipschitz control needs lam and node coordinates")
            if lipschitz_violation(v, self.coords, self.lam) is not None:
                raise ValueError("control violates the Lipschitz bound")

    def key(self) -> tuple:
        return tuple(np.round(self.values, 15).tolist())


def lipschitz_violation(values, coords, lam) -> tuple[int, int] | None:
    """First node pair with |u_i - u_j| >= lam |x_i - x_j|, or None."""
    values = np.asarray(values, float)
    du = np.abs(values[:, None] - values[None, :])
    dx = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    bad = (du >= lam * dx) & (dx > 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        return int(i), int(j)
    return None


def constant_control(domain: SpatialDomain, value: float, bounds, l2: float = math.inf) -> Control:
    return Control(np.full(domain.n_interior, float(value)), tuple(bounds), "generic", l2)


def piecewise_control(labels, part_values, bounds, l2: float = math.inf) -> Control:
    labels = np.asarray(labels, int)
    part_values = np.asarray(part_values, float)
    return Control(part_values[labels], tuple(bounds), "piecewise", l2, parts=labels)


def box_decomposition(domain: SpatialDomain, splits) -> np.ndarray:
    """Part labels for a tensor split of the box; ``splits[d]`` parts on axis d."""
    x = domain.interior_coords
    labels = np.zeros(len(x), dtype=int)
    stride = 1
    for d, k in enumerate(splits):
        lo, hi = domain.box[d]
        idx = np.clip(np.floor((x[:, d] - lo) / (hi - lo) * k).astype(int), 0, k - 1)
        labels += stride * idx
        stride *= k
    if len(np.unique(labels)) != stride:
        raise ValueError("decomposition has empty parts on this grid")
    return labels


def lipschitz_extension(anchor_pts, anchor_vals, lam_eff, pts):
    """Mean of the upper and lower McShane extensions: lam_eff-Lipschitz and
    interpolating whenever the anchor data are lam_eff-Lipschitz."""
    anchor_pts = np.atleast_2d(anchor_pts)
    anchor_vals = np.asarray(anchor_vals, float)
    if len(anchor_vals) == 1:
        return np.full(len(pts), anchor_vals[0])
    d = np.linalg.norm(pts[:, None, :] - anchor_pts[None, :, :], axis=-1)
    up = np.min(anchor_vals[None, :] + lam_eff * d, axis=1)
    lo = np.max(anchor_vals[None, :] - lam_eff * d, axis=1)
    return 0.5 * (up + lo)


def project_anchor_values(anchor_pts, anchor_vals, lam_eff):
    """Largest lam_eff-Lipschitz values below the given ones (upper McShane
    envelope evaluated on the anchors)."""
    anchor_pts = np.atleast_2d(anchor_pts)
    anchor_vals = np.asarray(anchor_vals, float)
    d = np.linalg.norm(anchor_pts[:, None, :] - anchor_pts[None, :, :], axis=-1)
    return np.min(anchor_vals[None, :] + lam_eff * d, axis=1)


def lipschitz_control(domain: SpatialDomain, anchor_pts, anchor_vals, lam: float, bounds, l2: float = math.inf,
                      margin: float = 1e-3) -> Control:
    lo, hi = bounds
    lam_eff = lam * (1 - margin)
    vals = np.clip(project_anchor_values(anchor_pts, np.clip(anchor_vals, lo, hi), lam_eff), lo, hi)
    u = np.clip(lipschitz_extension(anchor_pts, vals, lam_eff, domain.interior_coords), lo, hi)
    return Control(u, (lo, hi), "lipschitz", l2, lam=lam, coords=domain.interior_coords)


# ---------------------------------------------------------------- boundary data


@dataclass(frozen=True, eq=False)
class BoundaryDatum:
    v: GridFunction
    v0: GridFunction
    l1: float

    def check(self, K) -> float:
        """Y-distance to the reference; raises if it exceeds ``l1``."""
        from .kernel import y_norm

        dist = y_norm(K, self.v - self.v0)
        if dist > self.l1 * (1 + 1e-12):
            raise ValueError(f"boundary datum leaves V: |v - v0|_Y = {dist:.6g} > {self.l1}")
        return dist
