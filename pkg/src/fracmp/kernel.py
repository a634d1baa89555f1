"""Discrete Gagliardo form over Q and the objects built from it.

The bilinear form is the ordered double sum over the discrete pair set Q
(pairs with at least one interior node), i.e. twice the sum over unordered
pairs.  With this convention ``c(n, alpha) * B(z, phi)`` is the weak form of
``(-Delta)^(alpha/2)`` for the kernel ``|x - y|^-(n + alpha)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.special import gamma

from .space import GridFunction, SpatialDomain, extend_by_zero, lp_norm


def normalizing_constant(n: int, alpha: float) -> float:
    """c(n, alpha) = alpha Gamma((n+alpha)/2) / (Gamma(1-alpha/2) pi^(n/2) 2^(2-alpha))."""
    _check_alpha(alpha)
    return alpha * gamma((n + alpha) / 2) / (gamma(1 - alpha / 2) * math.pi ** (n / 2) * 2 ** (2 - alpha))


def normalizing_constant_alt(n: int, alpha: float) -> float:
    """Same constant written with |Gamma(-alpha/2)| and 2^(1-alpha)."""
    _check_alpha(alpha)
    return gamma((n + alpha) / 2) / (abs(gamma(-alpha / 2)) * math.pi ** (n / 2) * 2 ** (1 - alpha))


def _check_alpha(alpha):
    if not 0 < alpha < 2:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n."""
    return 2 * math.pi ** (n / 2) / gamma(n / 2)


@dataclass(frozen=True, eq=False)
class KernelWeights:
    """Pair weights ``K_ij = quad_i quad_j |x_i - x_j|^-(n+alpha)`` and tails.

    Stored densely as the interior-interior block ``k_ii`` (zero diagonal) and
    the interior-exterior block ``k_ie``; ``tail[i]`` covers ``|y - x_i| > R_ext``.
    """

    domain: SpatialDomain
    alpha: float
    c: float
    k_ii: np.ndarray = field(repr=False)
    k_ie: np.ndarray = field(repr=False)
    tail: np.ndarray = field(repr=False)

    @cached_property
    def stiffness(self) -> np.ndarray:
        """Matrix of the form restricted to X_0 coordinates: B(w, w) = w @ S @ w."""
        d = self.k_ii.sum(axis=1) + self.k_ie.sum(axis=1) + self.tail
        return 2.0 * (np.diag(d) - self.k_ii)

    @cached_property
    def stiffness_cholesky(self):
        return scipy.linalg.cho_factor(self.stiffness)

    @property
    def n_pairs(self) -> int:
        m = self.k_ii.shape[0]
        return m * (m - 1) // 2 + self.k_ie.size

    def pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unordered pair table (i, j, weight) with i < j in node numbering."""
        m = self.domain.n_interior
        iu, ju = np.triu_indices(m, k=1)
        ie, je = np.indices(self.k_ie.shape)
        i = np.concatenate([iu, ie.ravel()])
        j = np.concatenate([ju, m + je.ravel()])
        w = np.concatenate([self.k_ii[iu, ju], self.k_ie.ravel()])
        return i, j, w

    def far_field(self, z: GridFunction) -> float:
        """Constant used to extrapolate ``z`` beyond R_ext (outer-shell mean)."""
        shell = self.domain.outer_shell()
        if shell.size == 0:
            return 0.0
        return float(z.values[shell].mean())


def assemble_weights(grid: SpatialDomain, alpha: float) -> KernelWeights:
    _check_alpha(alpha)
    n = grid.n
    if n <= alpha:
        raise ValueError(f"need n > alpha, got n={n}, alpha={alpha}")
    if grid.r_ext - grid.collar < grid.h - 1e-12:
        raise ValueError("R_ext - collar must be at least h for the tail correction")
    m = grid.n_interior
    x = grid.coords
    q = grid.quad
    diff = x[:m, None, :] - x[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    with np.errstate(divide="ignore"):
        k = q[:m, None] * q[None, :] * dist ** (-(n + alpha))
    k[np.arange(m), np.arange(m)] = 0.0
    tail = sphere_area(n) * grid.r_ext ** (-alpha) / alpha * q[:m]
    return KernelWeights(
        domain=grid,
        alpha=float(alpha),
        c=normalizing_constant(n, alpha),
        k_ii=np.ascontiguousarray(k[:, :m]),
        k_ie=np.ascontiguousarray(k[:, m:]),
        tail=tail,
    )


def _check(K: KernelWeights, *zs: GridFunction):
    for z in zs:
        if z.domain is not K.domain:
            raise ValueError("grid function is not on the kernel's grid")


def bilinear_form(K: KernelWeights, z1: GridFunction, z2: GridFunction, extrapolate: bool = False) -> float:
    """Ordered double sum over Q; beyond R_ext each argument is taken as zero,
    or as its outer-shell constant when ``extrapolate`` is set."""
    _check(K, z1, z2)
    m = K.domain.n_interior
    a, b = z1.values, z2.values
    ai, ae, bi, be = a[:m], a[m:], b[:m], b[m:]
    # interior-interior: sum_{i<j} K (a_i - a_j)(b_i - b_j) = sum_i d_i a_i b_i - a K b
    kii = K.k_ii
    # averaged cross term keeps the result exactly symmetric in (z1, z2)
    s_ii = np.dot(kii.sum(axis=1), ai * bi) - 0.5 * (ai @ (kii @ bi) + bi @ (kii @ ai))
    # interior-exterior pairs
    s_ie = np.sum(K.k_ie * ((ai[:, None] - ae[None, :]) * (bi[:, None] - be[None, :])))
    fa = K.far_field(z1) if extrapolate else 0.0
    fb = K.far_field(z2) if extrapolate else 0.0
    s_t = np.dot(K.tail, (ai - fa) * (bi - fb))
    return float(2.0 * (s_ii + s_ie + s_t))


def _self_form(K, z, extrapolate=False):
    val = bilinear_form(K, z, z, extrapolate)
    scale = 2.0 * (K.k_ii.sum() + K.k_ie.sum() + K.tail.sum()) * float(np.max(np.abs(z.values), initial=0.0)) ** 2
    if val < -1e-12 * max(scale, 1.0):
        raise ArithmeticError(f"negative self-form {val}: kernel assembly is broken")
    return max(val, 0.0)


def x0_seminorm(K: KernelWeights, z: GridFunction) -> float:
    return math.sqrt(_self_form(K, z))


def x_norm(K: KernelWeights, z: GridFunction) -> float:
    return lp_norm(z, 2, "interior") + x0_seminorm(K, z)


def y_norm(K: KernelWeights, z: GridFunction) -> float:
    return lp_norm(z, 2, "all") + x0_seminorm(K, z)


def y_inner(K: KernelWeights, z1: GridFunction, z2: GridFunction) -> float:
    _check(K, z1, z2)
    l2 = float(np.dot(K.domain.quad * z1.values, z2.values))
    return l2 + bilinear_form(K, z1, z2)


def form_against_basis(K: KernelWeights, z: GridFunction, extrapolate: bool = False) -> np.ndarray:
    """Vector ``B(z, e_i)`` over the interior hat basis."""
    _check(K, z)
    m = K.domain.n_interior
    zi, ze = z.values[:m], z.values[m:]
    f = K.far_field(z) if extrapolate else 0.0
    return K.stiffness @ zi - 2.0 * (K.k_ie @ ze) - 2.0 * K.tail * f


def apply_operator(K: KernelWeights, z: GridFunction) -> GridFunction:
    """Discrete (-Delta)^(alpha/2) z on interior nodes, defined by duality with
    the weighted L^2 pairing; exterior entries are zero."""
    r = K.c * form_against_basis(K, z) / K.domain.quad[: K.domain.n_interior]
    return extend_by_zero(r, K.domain)


def project_complement(K: KernelWeights, v: GridFunction) -> GridFunction:
    """``v - P v`` with ``P v`` the Y-orthogonal projection of ``v`` onto X_0."""
    _check(K, v)
    m = K.domain.n_interior
    if m == 0:
        return v
    gram = K.stiffness + np.diag(K.domain.quad[:m])
    rhs = K.domain.quad[:m] * v.values[:m] + form_against_basis(K, v)
    try:
        cho = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Gram matrix of X_0 basis is singular") from exc
    pv = scipy.linalg.cho_solve(cho, rhs)
    out = v.values.copy()
    out[:m] -= pv
    return GridFunction(K.domain, out)


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: GridFunction


def eigenpairs(K: KernelWeights, count: int) -> list[EigenPair]:
    """Smallest eigenpairs of ``c B(rho, phi) = lambda <rho, phi>_L2`` on X_0."""
    m = K.domain.n_interior
    if not 1 <= count <= m:
        raise ValueError(f"count must lie in [1, {m}]")
    mass = K.domain.quad[:m]
    try:
        lam, vec = scipy.linalg.eigh(K.c * K.stiffness, np.diag(mass), subset_by_index=[0, count - 1])
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("generalized eigensolver did not converge") from exc
    out = []
    for k in range(count):
        v = vec[:, k]
        v = v / math.sqrt(np.dot(mass * v, v))
        # sign: positive mean, else positive first significant entry
        s = np.dot(mass, v)
        if abs(s) < 1e-10:
            s = v[np.flatnonzero(np.abs(v) > 1e-8 * np.abs(v).max())[0]]
        if s < 0:
            v = -v
        out.append(EigenPair(float(lam[k]), extend_by_zero(v, K.domain)))
    return out


def embedding_ratio(K: KernelWeights, z: GridFunction, s: float) -> float:
    n, a = K.domain.n, K.alpha
    crit = 2 * n / (n - a)
    if not 1 <= s < crit:
        raise ValueError(f"s must lie in [1, {crit})")
    den = x0_seminorm(K, z)
    if den == 0.0:
        raise ZeroDivisionError("zero X_0 seminorm")
    return lp_norm(z, s, "interior") / den


def write_weights(K: KernelWeights, path) -> None:
    """Text triples ``i,j,weight`` followed by a ``tail`` table."""
    i, j, w = K.pairs()
    lines = ["i,j,weight"]
    lines += [f"{a},{b},{c:.17g}" for a, b, c in zip(i, j, w)]
    lines.append("node,tail")
    lines += [f"{a},{t:.17g}" for a, t in enumerate(K.tail)]
    Path(path).write_text("\n".join(lines) + "\n")
