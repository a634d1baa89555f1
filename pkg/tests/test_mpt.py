import math

import numpy as np
import pytest
import scipy.linalg

from fracmp.energy import make_context, shifted_gradient, shifted_value
from fracmp.kernel import assemble_weights
from fracmp.model import example_nonlinearity, power_nonlinearity, quadratic_nonlinearity
from fracmp.mpt import (
    MPTSettings,
    apriori_ball_check,
    find_far_point,
    minimax_solve,
    morse_index,
    palais_smale_diagnostic,
    refine_critical,
    solve_problem,
    sphere_directions,
    verify_geometry,
    write_trace,
    x0_norm_vec,
    y_norm_vec,
)
from fracmp.space import build_grid, extend_by_zero

from oracles import dense_stiffness, linear_critical_point, quartic_critical_points

# least positive critical level of the 3x3 quartic problem, from the oracle
QUARTIC_LEVEL = 0.2393269096898057


@pytest.fixture(scope="module")
def quartic():
    K = assemble_weights(build_grid(2, [(0, 1), (0, 1)], 0.25, 0.25), 1.5)
    return make_context(K, power_nonlinearity(4.0), 0.0)


@pytest.fixture(scope="module")
def quartic_result(quartic):
    return solve_problem(quartic, MPTSettings())


@pytest.fixture(scope="module")
def example2d():
    K = assemble_weights(build_grid(2, [(0, 1), (0, 1)], 0.125, 0.125), 1.5)
    return make_context(K, example_nonlinearity(1.0), K.c)


def test_oracle_level_frozen(quartic):
    g = quartic.K.domain
    found = quartic_critical_points(dense_stiffness(g, 1.5), quartic.c, quartic.quad, starts=600)
    pos = [e for e, _ in found if e > 1e-9]
    assert min(pos) == pytest.approx(QUARTIC_LEVEL, rel=1e-10)


def test_minimax_quartic(quartic, quartic_result):
    r = quartic_result
    assert r.converged and r.grad_norm <= 1e-8
    assert r.c == pytest.approx(QUARTIC_LEVEL, abs=1e-6)
    assert abs(shifted_value(quartic, r.w.interior) - r.c) <= 1e-8
    assert r.c > 0 and x0_norm_vec(quartic, r.w.interior) > 0
    assert morse_index(quartic, r.w.interior)[0] == 1


def test_endpoints_fixed(quartic, quartic_result):
    r = quartic_result
    assert np.all(r.path[0] == 0.0)
    assert np.array_equal(r.path[-1], r.geometry.omega1)


def test_path_stage_max_nonincreasing(quartic_result):
    pm = np.array([row[2] for row in quartic_result.trace])
    assert np.all(np.diff(pm) <= 1e-14 * max(1.0, abs(pm).max()))


def test_far_point_trivial_and_scaling(quartic):
    m = quartic.m
    w = 10 * np.ones(m)
    assert shifted_value(quartic, w) < 0
    np.testing.assert_array_equal(find_far_point(quartic, w, 0.01), w)
    d = 1e-3 * (np.sin(np.arange(m) + 1.0) + 1.5)
    a = find_far_point(quartic, d, 0.05)
    b = find_far_point(quartic, 2 * d, 0.05)
    np.testing.assert_allclose(a, b, rtol=1e-12)
    with pytest.raises(ValueError):
        find_far_point(quartic, np.zeros(m), 0.05)


def test_far_point_against_ray_scan(quartic):
    m = quartic.m
    bump = np.exp(-np.arange(m) / 3.0)
    d = bump / y_norm_vec(quartic, bump)
    w1 = find_far_point(quartic, bump, 0.05)
    l0 = y_norm_vec(quartic, w1)
    ts = np.linspace(0.05, 2 * l0, 20001)
    vals = np.array([shifted_value(quartic, t * d) for t in ts])
    first_neg = ts[np.argmax(vals < 0)]
    assert shifted_value(quartic, w1) < 0
    assert first_neg <= l0 <= first_neg * (1 + 2e-3) + (ts[1] - ts[0])


def test_far_point_not_superlinear():
    K = assemble_weights(build_grid(2, [(0, 1), (0, 1)], 0.25, 0.25), 1.5)
    ctx = make_context(K, quadratic_nonlinearity(-1.0, 0.0), 0.0)
    with pytest.raises(RuntimeError):
        find_far_point(ctx, np.ones(ctx.m), 0.05)


def test_geometry_quadratic_sphere_values():
    g = build_grid(2, [(0, 1), (0, 1)], 0.25, 0.25)
    K = assemble_weights(g, 1.5)
    b = 0.5
    ctx = make_context(K, quadratic_nonlinearity(b, 0.0), 0.0)
    S = dense_stiffness(g, 1.5)
    q = g.quad[: g.n_interior]
    eta = 0.3
    rep = verify_geometry(ctx, eta, 50, omega1=np.ones(ctx.m))
    assert not rep.passed and rep.F_omega1 > 0
    expected = []
    for d in sphere_directions(ctx, 50, 0):
        w = eta * d / (math.sqrt(d @ (q * d)) + math.sqrt(d @ S @ d))
        expected.append(0.5 * K.c * w @ S @ w - 0.5 * b * w @ (q * w))
    assert rep.sphere_inf == pytest.approx(min(expected), rel=1e-10)
    # b below the first eigenvalue: F is positive on the whole sphere
    lam1 = scipy.linalg.eigvalsh(K.c * S, np.diag(q))[0]
    assert b < lam1
    assert rep.sphere_inf >= 0.5 * (1 - b / lam1) * K.c * min(w @ S @ w for w in [
        eta * d / (math.sqrt(d @ (q * d)) + math.sqrt(d @ S @ d)) for d in sphere_directions(ctx, 50, 0)])
    with pytest.raises(ValueError):
        verify_geometry(ctx, 0.0)
    with pytest.raises(RuntimeError):
        verify_geometry(ctx, eta, 50)  # no far point for a sublinear model


def test_geometry_example(example2d):
    rep = verify_geometry(example2d, 0.05, 200)
    assert rep.passed and rep.sphere_inf > 0 and rep.F_omega1 < 0 and rep.F_zero == 0.0


def test_refine_quadratic():
    K = assemble_weights(build_grid(2, [(0, 1), (0, 1)], 0.25, 0.25), 1.5)
    ctx = make_context(K, quadratic_nonlinearity(1.0, 1.0), 0.0)
    g = K.domain
    exact = linear_critical_point(dense_stiffness(g, 1.5), K.c, ctx.quad, 1.0, 1.0)
    w, gn = refine_critical(ctx, np.random.default_rng(0).standard_normal(ctx.m))
    np.testing.assert_allclose(w.interior, exact, rtol=1e-8, atol=1e-10)
    w2, gn2 = refine_critical(ctx, extend_by_zero(exact, g))
    assert gn2 <= 1e-8 and np.array_equal(w2.interior, exact)
    with pytest.raises(ValueError):
        refine_critical(ctx, exact, tol_grad=0.0)


def test_minimax_rejects_short_path(quartic, quartic_result):
    with pytest.raises(ValueError):
        minimax_solve(quartic, quartic_result.geometry.omega1, P=4)


def test_max_iter_exhaustion_reported(example2d):
    geo = verify_geometry(example2d, 0.05)
    r = minimax_solve(example2d, geo.omega1, max_iter=1, refine_max_iter=0)
    assert not r.converged and r.message


def test_geometry_failure_not_silent():
    K = assemble_weights(build_grid(2, [(0, 1), (0, 1)], 0.25, 0.25), 1.5)
    ctx = make_context(K, quadratic_nonlinearity(2 * K.c * 50, 0.0).with_constants(
        G=lambda x, z, u: 50 * K.c * z**2 + z**4 / 4, Gz=lambda x, z, u: 100 * K.c * z + z**3), 0.0)
    r = solve_problem(ctx, MPTSettings())
    assert not r.converged and "geometry" in r.message


def test_palais_smale(quartic, quartic_result):
    w = quartic_result.w
    rep = palais_smale_diagnostic(quartic, [w] * 6)
    assert rep.is_ps and rep.tail_spread == 0.0
    ws = [it[0] for it in quartic_result.iterates]
    rep = palais_smale_diagnostic(quartic, ws, [it[1] for it in quartic_result.iterates],
                                  [it[2] for it in quartic_result.iterates])
    assert rep.is_ps and rep.tail_spread < 1e-3 * x0_norm_vec(quartic, w.interior)
    big = [k * np.ones(quartic.m) for k in (1, 10, 1e3, 1e5, 1e7)]
    assert not palais_smale_diagnostic(quartic, big).is_ps


def test_palais_smale_example(example2d):
    r = solve_problem(example2d, MPTSettings())
    assert r.converged
    rep = palais_smale_diagnostic(example2d, [it[0] for it in r.iterates])
    assert rep.is_ps and rep.tail_spread < 1e-3 * x0_norm_vec(example2d, r.w.interior)


def test_apriori_ball_power(quartic, quartic_result):
    rep = apriori_ball_check(quartic, quartic_result.w, 4.0, quartic_result.c)
    assert rep.D1 == 0.0 and rep.D2 <= 1e-15
    assert rep.rho == pytest.approx(math.sqrt(2 * 4 * quartic_result.c / (quartic.c * 2)), rel=1e-12)
    # a mountain-pass point of a pure power sits on the Nehari set, so on the bound
    assert rep.norm == pytest.approx(rep.rho, rel=1e-7)
    rep = apriori_ball_check(quartic, quartic_result.w, 4.0, 1.01 * quartic_result.c)
    assert rep.inside
    with pytest.raises(ValueError):
        apriori_ball_check(quartic, quartic_result.w, 2.0, 1.0)


def test_determinism(quartic, quartic_result, tmp_path):
    again = solve_problem(quartic, MPTSettings(workers=3))
    assert np.array_equal(again.w.values, quartic_result.w.values) and again.c == quartic_result.c
    write_trace(quartic_result, tmp_path / "a.csv")
    write_trace(again, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_settings_validation():
    for kw in (dict(eta=0.0), dict(P=4), dict(tol_grad=0.0)):
        with pytest.raises(ValueError):
            MPTSettings(**kw)


def test_gradient_at_solution_small(quartic, quartic_result):
    assert np.linalg.norm(shifted_gradient(quartic, quartic_result.w.interior)) <= 1e-8
