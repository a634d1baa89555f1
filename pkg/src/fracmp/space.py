"""Uniform grids over a box and a truncated exterior collar.

Nodes are ordered interior-first, so the X_0 coordinates of a grid function
are simply ``values[:n_interior]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INTERIOR = "interior"
COLLAR = "collar"

_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SpatialDomain:
    """Box ``Omega`` sampled on a uniform lattice plus an exterior collar.

    Boundary lattice points (on the closure of the box but not inside it)
    belong to neither region and are dropped.
    """

    n: int
    box: tuple[tuple[float, float], ...]
    h: float
    collar: float
    r_ext: float
    coords: np.ndarray  # (N, n)
    region: np.ndarray  # (N,) bool, True on interior nodes
    n_interior: int
    quad: np.ndarray = field(repr=False)  # (N,) midpoint weights h**n

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_collar(self) -> int:
        return self.n_nodes - self.n_interior

    @property
    def interior_coords(self) -> np.ndarray:
        return self.coords[: self.n_interior]

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.box]))

    def distance_to_box(self, pts: np.ndarray | None = None) -> np.ndarray:
        pts = self.coords if pts is None else np.atleast_2d(pts)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
        return np.sqrt(np.sum(gap**2, axis=1))

    def outer_shell(self) -> np.ndarray:
        """Indices of collar nodes in the outermost lattice layer."""
        if self.n_collar == 0:
            return np.zeros(0, dtype=int)
        d = self.distance_to_box()[self.n_interior :]
        return self.n_interior + np.flatnonzero(d > d.max() - self.h + _TOL)

    def region_mask(self, region: str) -> np.ndarray:
        if region == INTERIOR:
            return self.region
        if region == COLLAR:
            return ~self.region
        if region == "all":
            return np.ones(self.n_nodes, dtype=bool)
        raise ValueError(f"unknown region {region!r}")


def build_grid(n: int, box, h: float, collar: float = 0.0, r_ext: float | None = None) -> SpatialDomain:
    """Lattice ``lo + k*h`` per axis; interior nodes strictly inside the box,
    collar nodes outside its closure within Euclidean distance ``collar``."""
    if n not in (1, 2, 3):
        raise ValueError("dimension must be 1, 2 or 3")
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    if len(box) != n:
        raise ValueError(f"box has {len(box)} axes, expected {n}")
    if any(hi <= lo for lo, hi in box):
        raise ValueError("box must be nonempty")
    if not h > 0:
        raise ValueError("h must be positive")
    if h > min(hi - lo for lo, hi in box) + _TOL:
        raise ValueError("h exceeds the shortest box edge")
    if collar < 0:
        raise ValueError("collar must be nonnegative")
    if r_ext is None:
        # tail sphere centred on a mid-box node then reaches the collar's outer edge
        r_ext = collar + 0.5 * math.sqrt(sum((hi - lo) ** 2 for lo, hi in box))
    r_ext = float(r_ext)
    if r_ext < collar:
        raise ValueError("R_ext must be at least the collar width")

    pad = int(math.floor(collar / h + _TOL))
    axes = []
    for lo, hi in box:
        kmax = int(math.floor((hi - lo) / h + _TOL))
        axes.append(lo + h * np.arange(-pad, kmax + pad + 1))
    pts = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, n)

    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    inside = np.all((pts > lo + _TOL) & (pts < hi - _TOL), axis=1)
    outside = np.any((pts < lo - _TOL) | (pts > hi + _TOL), axis=1)
    gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
    dist = np.sqrt(np.sum(gap**2, axis=1))
    in_collar = outside & (dist <= collar + _TOL)

    coords = np.vstack([pts[inside], pts[in_collar]])
    region = np.zeros(coords.shape[0], dtype=bool)
    region[: int(inside.sum())] = True
    return SpatialDomain(
        n=n,
        box=box,
        h=float(h),
        collar=float(collar),
        r_ext=r_ext,
        coords=coords,
        region=region,
        n_interior=int(inside.sum()),
        quad=np.full(coords.shape[0], float(h) ** n),
    )


@dataclass(frozen=True, eq=False)
class GridFunction:
    domain: SpatialDomain
    values: np.ndarray
    x0: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.domain.n_nodes,):
            raise ValueError(f"expected {self.domain.n_nodes} node values, got shape {values.shape}")
        if self.x0 and np.any(values[self.domain.n_interior :] != 0.0):
            raise ValueError("X_0 function must vanish on exterior nodes")
        object.__setattr__(self, "values", values)

    @property
    def interior(self) -> np.ndarray:
        return self.values[: self.domain.n_interior]

    @property
    def exterior(self) -> np.ndarray:
        return self.values[self.domain.n_interior :]

    def __add__(self, other: GridFunction) -> GridFunction:
        _same_grid(self, other)
        return GridFunction(self.domain, self.values + other.values, self.x0 and other.x0)

    def __sub__(self, other: GridFunction) -> GridFunction:
        _same_grid(self, other)
        return GridFunction(self.domain, self.values - other.values, self.x0 and other.x0)

    def __mul__(self, t: float) -> GridFunction:
        return GridFunction(self.domain, t * self.values, self.x0)

    __rmul__ = __mul__


def _same_grid(a: GridFunction, b: GridFunction):
    if a.domain is not b.domain:
        raise ValueError("grid functions live on different grids")


def extend_by_zero(values, grid: SpatialDomain) -> GridFunction:
    values = np.asarray(values, dtype=float).ravel()
    if values.size != grid.n_interior:
        raise ValueError(f"expected {grid.n_interior} interior values, got {values.size}")
    full = np.zeros(grid.n_nodes)
    full[: grid.n_interior] = values
    return GridFunction(grid, full, x0=True)


def restrict(z: GridFunction) -> np.ndarray:
    return z.interior.copy()


def sample(grid: SpatialDomain, f, x0: bool = False) -> GridFunction:
    """Evaluate ``f(coords)`` on the nodes; ``x0=True`` zeroes the exterior."""
    vals = np.asarray(f(grid.coords), dtype=float).reshape(grid.n_nodes)
    if x0:
        vals = vals.copy()
        vals[grid.n_interior :] = 0.0
    return GridFunction(grid, vals, x0=x0)


def lp_norm(z: GridFunction, s: float, region: str = INTERIOR) -> float:
    if s < 1:
        raise ValueError("s must be >= 1")
    mask = z.domain.region_mask(region)
    vals = np.abs(z.values[mask])
    if vals.size == 0:
        return 0.0
    scale = vals.max()
    if scale == 0.0:
        return 0.0
    # scaled to avoid overflow for large s
    return float(scale * np.sum(z.domain.quad[mask] * (vals / scale) ** s) ** (1.0 / s))


def write_node_table(grid: SpatialDomain, path) -> None:
    """Plain-text node table: index, coords..., region, weight."""
    cols = ["index"] + [f"x{d}" for d in range(grid.n)] + ["region", "weight"]
    lines = [",".join(cols)]
    for i in range(grid.n_nodes):
        tag = INTERIOR if grid.region[i] else COLLAR
        xs = ",".join(f"{c:.17g}" for c in grid.coords[i])
        lines.append(f"{i},{xs},{tag},{grid.quad[i]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")
