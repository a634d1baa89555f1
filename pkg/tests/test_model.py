import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracmp.kernel import assemble_weights, normalizing_constant, y_norm
from fracmp.model import (
    BoundaryDatum,
    Control,
    CostIntegrand,
    Nonlinearity,
    box_decomposition,
    calibrate,
    check_C1,
    check_C2,
    check_C3,
    check_C4,
    check_C5,
    check_C7,
    constant_control,
    critical_exponent,
    estimate_star_constants,
    example_nonlinearity,
    lipschitz_control,
    lipschitz_violation,
    make_sample,
    piecewise_control,
    power_nonlinearity,
    quadratic_nonlinearity,
    star_feasible,
    tabulated_nonlinearity,
)
from fracmp.space import GridFunction, build_grid

C_HAT = normalizing_constant(3, 1.5)
CUBE = build_grid(3, [(0, 1)] * 3, 0.25)
X = CUBE.interior_coords


def custom(G, Gz, s=3.0, p=3.0, **kw):
    return Nonlinearity(G, Gz, s=s, p=p, **kw)


def test_example_values():
    N = example_nonlinearity(1.0)
    x = np.array([[0.3, 0.1, 0.2]])
    for u in (0.0, 0.4, 2.0):
        assert N.G(x, 0.0, u) == 0.0
    assert N.G(x, 1.0, 0.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        example_nonlinearity(0.0)


def test_example_derivative_fd():
    N = example_nonlinearity(1.0)
    r = math.asin(math.sqrt(0.5))
    x = np.array([[r, 0.0, 0.0]])
    step = 1e-5
    fd = (N.G(x, 2 + step, 0.1) - N.G(x, 2 - step, 0.1)) / (2 * step)
    assert N.Gz(x, 2.0, 0.1) == pytest.approx(fd, rel=1e-6)
    # signed-power extension is even in z
    assert N.G(x, -1.7, 0.3) == pytest.approx(N.G(x, 1.7, 0.3))


@pytest.mark.parametrize("N", [example_nonlinearity(1.0), example_nonlinearity(2.5), power_nonlinearity(3.0),
                               quadratic_nonlinearity(1.5, 0.2)], ids=lambda N: N.name)
def test_fd_consistency_on_random_samples(N):
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 1, (1000, 3))
    z = rng.uniform(-5, 5, 1000)
    u = rng.uniform(0, 1, 1000)
    step = 1e-5
    fd = (N.G(x, z + step, u) - N.G(x, z - step, u)) / (2 * step)
    err = np.abs(fd - N.Gz(x, z, u)) / np.maximum(1, np.abs(fd))
    assert err.max() <= 1e-6


def test_check_C1():
    N = example_nonlinearity(1.0)
    assert check_C1(N, make_sample(X, 10, [0.0, 1.0], 101)).holds
    bad = custom(lambda x, z, u: z**3, lambda x, z, u: 2 * z**2)
    rep = check_C1(bad, make_sample(X, 2, [0.0], 11))
    assert not rep.holds and rep.witness is not None


def test_check_C2_examples():
    smp = make_sample(X, 10, np.linspace(0, 1, 5), 201)
    zero = custom(lambda x, z, u: 0 * z, lambda x, z, u: 0 * z, s=3.5)
    rep = check_C2(zero, smp, 3, 1.5)
    assert rep.holds and rep.c_fit == 0.0
    pw = custom(lambda x, z, u: np.abs(z) ** 3.5, lambda x, z, u: 3.5 * np.sign(z) * np.abs(z) ** 2.5, s=3.5)
    assert check_C2(pw, smp, 3, 1.5).info["c_G"] <= 1.0
    rep = check_C2(example_nonlinearity(1.0), smp, 3, 1.5)
    assert rep.holds and np.isfinite(rep.c_fit)
    assert critical_exponent(3, 1.5) == pytest.approx(4.0)
    over = custom(pw.G, pw.Gz, s=5.0)
    assert not check_C2(over, smp, 3, 1.5).holds


@pytest.mark.parametrize("p", [2.5, 3.0, 3.5, 4.0])
def test_check_C3_power(p):
    smp = make_sample(X, 10, [0.0], 201)
    N = power_nonlinearity(p)
    a = 0.99 * 1.0  # min of pG = |z|^p at |z| = R = 1
    assert check_C3(N.with_constants(a=a, R=1.0), smp).holds


def test_check_C3_example_and_failure():
    smp = make_sample(X, 10, np.linspace(0.2, 0.4, 3), 401)
    N = calibrate(example_nonlinearity(1.0), smp, C_HAT, 0.005)
    rep = check_C3(N, smp)
    assert rep.holds and rep.info["min_margin"] >= 0
    sq = custom(lambda x, z, u: z**2, lambda x, z, u: 2 * z, p=3.0, a=0.1, R=1.0)
    rep = check_C3(sq, smp)
    assert not rep.holds and rep.witness is not None
    with pytest.raises(ValueError):
        check_C3(example_nonlinearity(1.0), smp)


def test_check_C4():
    smp = make_sample(X, 1, [0.5], 11)
    neg = custom(lambda x, z, u: -0.5 * C_HAT * z**2, lambda x, z, u: -C_HAT * z, zeta=0.01)
    rep = check_C4(neg, 0.0, C_HAT, smp)
    assert rep.holds and rep.c_fit == 0.0
    with pytest.raises(ValueError):
        check_C4(neg, 0.02, C_HAT, smp)


def test_check_C4_example_admissible_u():
    # U inside ((c - b)/gamma, (c + b)/gamma); b from the fit itself must stay below c/2
    U = np.linspace(0.8 * C_HAT, 1.2 * C_HAT, 5)
    smp = make_sample(X, 10, U, 401)
    N = example_nonlinearity(1.0).with_constants(zeta=0.005)
    rep = check_C4(N, 0.0, C_HAT, smp)
    assert rep.holds and 0 < rep.c_fit < 0.5 * C_HAT
    assert np.all(U > C_HAT - rep.c_fit) and np.all(U < C_HAT + rep.c_fit)
    far = make_sample(X, 10, [0.0], 401)
    assert not check_C4(N, 0.0, C_HAT, far).holds


def test_check_C5_C7():
    smp = make_sample(X, 5, [0.0], 51)
    indep = power_nonlinearity(3.0)
    assert check_C5(indep, 0.5, 0.1, smp).c_fit == 0.0
    rep = check_C5(example_nonlinearity(1.0), C_HAT, 0.2 * C_HAT, smp)
    assert rep.holds and np.isfinite(rep.c_fit) and rep.c_fit > 0
    one = CostIntegrand(lambda x, z, u: np.ones_like(z), 2.0)
    assert check_C7(one, smp).c_fit == pytest.approx(1.0)
    assert check_C7(CostIntegrand(lambda x, z, u: (z - 0.5) ** 2, 2.0), smp, 3, 1.5).holds


def test_star_constants():
    smp = make_sample(X[:4], 10, [0.0], 201)
    pw = custom(lambda x, z, u: np.abs(z) ** 3, lambda x, z, u: 3 * z * np.abs(z), R=1.0)
    sc = estimate_star_constants(pw, smp, C_HAT)
    assert sc.a0 == pytest.approx(1.0) and sc.a1 == 0.0 and sc.feasible
    shifted = custom(lambda x, z, u: np.abs(z) ** 3 - 5, lambda x, z, u: 3 * z * np.abs(z), R=1.0)
    sc = estimate_star_constants(shifted, smp, C_HAT)
    assert 0.99 <= sc.a0 <= 1.0 and sc.a1 <= 5.0
    _, Z, U = smp.points()
    assert np.all(shifted.G(None, Z, U) >= np.abs(Z) ** 3 - 5 - 1e-12)
    U = np.linspace(0.8 * C_HAT, 1.2 * C_HAT, 3)
    big = make_sample(X, 10, U, 201)
    N = calibrate(example_nonlinearity(1.0), big, C_HAT, 0.005)
    sc = estimate_star_constants(N, big, C_HAT)
    assert sc.feasible
    assert star_feasible(N, big, C_HAT, sc.a0, sc.a1, sc.b, sc.a2)


def test_tabulated_matches_closed_form():
    z = np.linspace(-3, 3, 601)
    u = np.linspace(0, 1, 3)
    N = power_nonlinearity(4.0)
    T = tabulated_nonlinearity(z, u, np.broadcast_to(N.G(None, z[:, None], u[None, :]), (601, 3)), s=4, p=4)
    zz = np.array([0.123, -1.7, 2.49])
    np.testing.assert_allclose(T.G(None, zz, 0.5), N.G(None, zz, 0.5), rtol=1e-3, atol=1e-5)
    np.testing.assert_allclose(T.Gz(None, zz, 0.5), N.Gz(None, zz, 0.5), rtol=1e-3, atol=1e-4)


GRID = build_grid(2, [(0, 1), (0, 1)], 0.125)
bounds_st = st.tuples(st.floats(-2, 2), st.floats(0, 2)).map(lambda t: (t[0], t[0] + t[1]))


@given(bounds_st, st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.floats(0.1, 10))
@settings(max_examples=60, deadline=None)
def test_lipschitz_control_stays_admissible(bounds, vals, lam):
    anchors = np.array([[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])
    u = lipschitz_control(GRID, anchors, vals, lam, bounds)
    lo, hi = bounds
    assert np.all(u.values >= lo) and np.all(u.values <= hi)
    assert lipschitz_violation(u.values, GRID.interior_coords, lam) is None


@given(bounds_st, st.lists(st.floats(0, 1), min_size=2, max_size=2))
@settings(max_examples=60, deadline=None)
def test_piecewise_control_stays_admissible(bounds, fr):
    lo, hi = bounds
    vals = [lo + f * (hi - lo) for f in fr]
    vals = [min(max(v, lo), hi) for v in vals]
    u = piecewise_control(box_decomposition(GRID, [2, 1]), vals, bounds)
    assert np.all(u.values >= lo) and np.all(u.values <= hi)


def test_control_validation():
    labels = box_decomposition(GRID, [2, 2])
    assert sorted(np.bincount(labels)) == [9, 12, 12, 16]
    with pytest.raises(ValueError):
        piecewise_control(labels, [0.1, 0.2, 0.3, 2.0], (0, 1))
    with pytest.raises(ValueError):
        Control(np.linspace(0, 1, GRID.n_interior), (0, 1), "piecewise", parts=labels)
    with pytest.raises(ValueError):
        constant_control(GRID, 0.9, (0, 1), l2=0.5)
    with pytest.raises(ValueError):
        box_decomposition(build_grid(2, [(0, 1), (0, 1)], 0.5), [4, 1])
    u = constant_control(GRID, 0.3, (0, 1))
    assert u.key() == tuple([0.3] * GRID.n_interior)


def test_boundary_datum():
    g = build_grid(2, [(0, 1), (0, 1)], 0.25, 0.25)
    K = assemble_weights(g, 1.5)
    v0 = GridFunction(g, np.zeros(g.n_nodes))
    v = GridFunction(g, np.r_[np.zeros(g.n_interior), np.full(g.n_collar, 0.1)])
    d = y_norm(K, v)
    assert BoundaryDatum(v, v0, 1.0).check(K) == pytest.approx(d)
    with pytest.raises(ValueError):
        BoundaryDatum(v, v0, 0.5 * d).check(K)
