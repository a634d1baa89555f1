"""Action functionals and their gradients.

Internally everything works on the interior coordinate vector ``w`` of an
X_0 function; the public functions also accept GridFunctions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernel import KernelWeights, bilinear_form, form_against_basis
from .model import Control, Nonlinearity
from .space import GridFunction, extend_by_zero


@dataclass(frozen=True, eq=False)
class EnergyContext:
    """Problem data (K, G, u, v) plus the cached pieces that depend on v, u.

    ``extrapolate`` applies the constant far-field tail to the boundary datum.
    """

    K: KernelWeights
    N: Nonlinearity
    u: np.ndarray
    v: GridFunction
    extrapolate: bool = True
    bv: np.ndarray = field(init=False, repr=False)
    v_int: np.ndarray = field(init=False, repr=False)
    Gv: np.ndarray = field(init=False, repr=False)
    int_Gv: float = field(init=False)
    vBv: float = field(init=False)

    def __post_init__(self):
        dom = self.K.domain
        if self.v.domain is not dom:
            raise ValueError("boundary datum is not on the kernel's grid")
        u = self.u.values if isinstance(self.u, Control) else self.u
        u = np.broadcast_to(np.asarray(u, float), (dom.n_interior,)).copy()
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v_int", self.v.values[: dom.n_interior].copy())
        object.__setattr__(self, "bv", form_against_basis(self.K, self.v, self.extrapolate))
        gv = self.N.G(self.x, self.v_int, u)
        object.__setattr__(self, "Gv", gv)
        object.__setattr__(self, "int_Gv", float(np.dot(self.quad, gv)))
        object.__setattr__(self, "vBv", bilinear_form(self.K, self.v, self.v, self.extrapolate))

    @property
    def x(self) -> np.ndarray:
        return self.K.domain.interior_coords

    @property
    def quad(self) -> np.ndarray:
        return self.K.domain.quad[: self.K.domain.n_interior]

    @property
    def c(self) -> float:
        return self.K.c

    @property
    def m(self) -> int:
        return self.K.domain.n_interior

    def with_data(self, u=None, v: GridFunction | None = None) -> EnergyContext:
        return EnergyContext(self.K, self.N, self.u if u is None else u, self.v if v is None else v, self.extrapolate)


def make_context(K: KernelWeights, N: Nonlinearity, u, v: GridFunction | None = None, extrapolate: bool = True) -> EnergyContext:
    if v is None:
        v = GridFunction(K.domain, np.zeros(K.domain.n_nodes))
    return EnergyContext(K, N, u, v, extrapolate)


def _interior(ctx: EnergyContext, w) -> np.ndarray:
    if isinstance(w, GridFunction):
        if w.domain is not ctx.K.domain:
            raise ValueError("grid function is not on the context's grid")
        if np.any(w.exterior != 0.0):
            raise ValueError("expected an X_0 function")
        return w.interior
    w = np.asarray(w, float)
    if w.shape != (ctx.m,):
        raise ValueError(f"expected {ctx.m} interior values")
    return w


def action_F(ctx: EnergyContext, z: GridFunction) -> float:
    """(c/2) B(z, z) - sum_i quad_i G(x_i, z_i, u_i)."""
    quadratic = 0.5 * ctx.c * bilinear_form(ctx.K, z, z, ctx.extrapolate)
    zi = z.values[: ctx.m]
    return float(quadratic - np.dot(ctx.quad, ctx.N.G(ctx.x, zi, ctx.u)))


def shifted_value(ctx: EnergyContext, w: np.ndarray) -> float:
    S = ctx.K.stiffness
    quad = 0.5 * ctx.c * np.dot(w, S @ w) + ctx.c * np.dot(w, ctx.bv)
    pot = np.dot(ctx.quad, ctx.N.G(ctx.x, w + ctx.v_int, ctx.u) - ctx.Gv)
    return float(quad - pot)


def shifted_gradient(ctx: EnergyContext, w: np.ndarray) -> np.ndarray:
    S = ctx.K.stiffness
    return ctx.c * (S @ w + ctx.bv) - ctx.quad * ctx.N.Gz(ctx.x, w + ctx.v_int, ctx.u)


def shifted_action(ctx: EnergyContext, w) -> float:
    """F_k(w) = F(w + v) - (c/2) B(v, v) + int G(x, v, u); vanishes at w = 0."""
    return shifted_value(ctx, _interior(ctx, w))


def gradient(ctx: EnergyContext, w) -> GridFunction:
    """r_i = c B(w + v, e_i) - quad_i G_z(x_i, w_i + v_i, u_i), so that
    <r, h> is the derivative of F_k at w in direction h."""
    return extend_by_zero(shifted_gradient(ctx, _interior(ctx, w)), ctx.K.domain)


def weak_residual_norm(ctx: EnergyContext, w) -> float:
    return float(np.linalg.norm(shifted_gradient(ctx, _interior(ctx, w))))


def jacobian(ctx: EnergyContext, w: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """c S plus the diagonal z-derivative of the potential term, the latter by
    central differences of G_z (the potential is pointwise in z)."""
    z = w + ctx.v_int
    eps = step * np.maximum(1.0, np.abs(z))
    gzz = (ctx.N.Gz(ctx.x, z + eps, ctx.u) - ctx.N.Gz(ctx.x, z - eps, ctx.u)) / (2 * eps)
    J = ctx.c * ctx.K.stiffness.copy()
    J[np.diag_indices_from(J)] -= ctx.quad * gzz
    return J
