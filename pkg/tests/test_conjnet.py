import numpy as np
import pytest

from rigidlab.conjnet import (
    ORDERED, PAIRS, InconsistentCauchyData, NetCoefficients, axis_data, dmz_integrate,
    fit_coefficients, q_residual, solve_support, with_index_order,
)
from rigidlab.corpus import TrigSum, scalar_multiple_coefficients, scalar_multiple_net, separable_curves
from rigidlab.families import SeparableSphereNet
from rigidlab.numgrid import BlowUpError, ChartGrid, Field


def separable(grid, k=4, seed=0):
    rng = np.random.default_rng(seed)
    curves = separable_curves(rng, k)
    u = grid.coords()
    return sum(curves[i](u[i]) for i in range(3)) + rng.normal(size=k)


def constant_coeffs(grid, gamma=0.0, g=0.0):
    a = np.full(grid.shape, gamma)
    b = np.full(grid.shape, g)
    return NetCoefficients(grid, {k: a for k in ORDERED}, {k: b for k in PAIRS})


def rho_setup(h, seed=1):
    rng = np.random.default_rng(seed)
    rho = TrigSum.random(rng)
    curves = separable_curves(rng, 5)
    offset = rng.normal(size=5)
    grid = ChartGrid.centered(0.24, h)
    return grid, scalar_multiple_coefficients(grid, rho), scalar_multiple_net(grid, rho, curves, offset)


def test_zero_coefficients_reproduce_separable_sum():
    g = ChartGrid.centered(0.2, 0.02)
    F = separable(g)
    out = dmz_integrate(NetCoefficients.zeros(g), axis_data(F, g))
    assert np.max(np.abs(out.values - F)) <= 1e-10
    assert q_residual(F, NetCoefficients.zeros(g))[1] <= 1e-10


def test_cos_product_residual_order_two():
    res = []
    for h, bound in ((0.02, 1e-4), (0.01, 2.5e-5)):
        g = ChartGrid.centered(0.24, h)
        u = g.coords()
        F = np.cos(u[0]) * np.cos(u[1]) * np.cos(u[2])
        co = constant_coeffs(g, 0.0, 1.0)
        out = dmz_integrate(co, axis_data(F, g))
        r = q_residual(out, co)[1]
        assert r <= bound
        res.append(r)
    assert np.log2(res[0] / res[1]) >= 1.8


def test_round_trip_fit_then_integrate():
    g, _, exact = rho_setup(0.01)
    fitted, rep = fit_coefficients(Field(g, exact))
    assert not rep.degenerate.any()
    back = dmz_integrate(fitted, axis_data(exact, g))
    assert np.max(np.abs(back.values - exact)) <= 5e-6


def test_round_trip_integrate_then_fit():
    g, co, exact = rho_setup(0.01)
    F = dmz_integrate(co, axis_data(exact, g))
    fitted, _ = fit_coefficients(F)
    m = g.interior_mask()
    assert max(np.max(np.abs(fitted.Gamma[k] - co.Gamma[k])[m]) for k in ORDERED) <= 1e-5
    assert max(np.max(np.abs(fitted.gij[k] - co.gij[k])[m]) for k in PAIRS) <= 1e-5


def test_fit_on_separable_gives_zero():
    g = ChartGrid.centered(0.2, 0.02)
    fitted, rep = fit_coefficients(Field(g, separable(g, k=5)))
    assert max(np.max(np.abs(v)) for v in list(fitted.Gamma.values()) + list(fitted.gij.values())) <= 1e-8
    assert np.max(rep.residual) <= 1e-8


def test_fit_flags_degenerate_nodes():
    g = ChartGrid.centered(0.2, 0.05)
    u = g.coords()
    # all components depend on u0 + u1 only at this level: d0 h and d1 h are parallel everywhere
    s = u[0] + u[1]
    h = np.stack([np.sin(s), np.cos(s), s, s ** 2 + u[2]], axis=-1)
    _, rep = fit_coefficients(Field(g, h))
    assert rep.degenerate[g.interior_mask(1)].all()


def test_noise_is_detected():
    g, co, exact = rho_setup(0.02)
    clean = q_residual(exact, co)[1]
    noisy = exact + 1e-3 * np.random.default_rng(5).standard_normal(exact.shape)
    r = q_residual(noisy, co)[1]
    assert r > 1e-3 and r > 100 * clean


def test_residual_order_two_under_refinement():
    res = []
    for h in (0.04, 0.02, 0.01):
        g, co, exact = rho_setup(h)
        res.append(q_residual(dmz_integrate(co, axis_data(exact, g)), co)[1])
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders >= 1.8)


def test_family_net_is_spherical_and_solves_support():
    fam = SeparableSphereNet()
    drift, res = [], []
    for h in (0.04, 0.02):
        g = ChartGrid.centered(0.24, h)
        net = fam.net(g)
        F = dmz_integrate(net.coeffs, axis_data(net.h.values, g))
        drift.append(np.max(np.abs(np.sum(F.values ** 2, -1) - 1)))
        res.append(q_residual(net.gamma, net.coeffs)[1])
        assert net.sphericality() <= 1e-12
    assert drift[1] <= drift[0] / 3.5
    assert res[1] <= res[0] / 3.5


def test_support_constant_with_zero_g():
    g = ChartGrid.centered(0.2, 0.05)
    rng = np.random.default_rng(2)
    Gam = {k: rng.normal() * np.ones(g.shape) for k in ORDERED}
    co = NetCoefficients(g, Gam, {k: np.zeros(g.shape) for k in PAIRS})
    out = solve_support(co, axis_data(np.full(g.shape, 2.5), g))
    assert np.max(np.abs(out.values - 2.5)) <= 1e-12


def test_inconsistent_cauchy_data():
    g = ChartGrid.centered(0.2, 0.05)
    data = axis_data(separable(g), g)
    data[1] = data[1] + 1.0
    with pytest.raises(InconsistentCauchyData):
        dmz_integrate(NetCoefficients.zeros(g), data)


def test_blow_up_guard():
    g = ChartGrid([(0, 40)] * 3, (41, 41, 41))
    co = constant_coeffs(g, 3.0, 0.0)
    u = g.coords()
    with pytest.raises(BlowUpError) as exc:
        dmz_integrate(co, axis_data(1.0 + u[0] + u[1] + u[2], g))
    assert exc.value.node is not None


def test_index_order_switch_swaps():
    g = ChartGrid.centered(0.2, 0.05)
    co = NetCoefficients(g, {k: np.full(g.shape, 10 * k[0] + k[1]) for k in ORDERED},
                         {k: np.zeros(g.shape) for k in PAIRS})
    sw = with_index_order(co, "target-first")
    assert np.all(sw.Gamma[(0, 1)] == 10) and np.all(sw.Gamma[(1, 0)] == 1)
    assert with_index_order(co) is co
