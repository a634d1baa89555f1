"""Mountain-pass solutions of superlinear fractional Dirichlet problems on
grids: nonlocal stiffness assembly, minimax critical points, stability of
solution sets under data perturbations and optimal control."""

__version__ = "0.1.0"
