import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rigidlab.numgrid import (
    BlowUpError, ChartGrid, Field, GridError, line_integrate, partial_derivative,
    plaquette_holonomy, read_field_csv, write_field_csv,
)


def test_spacing_and_base():
    g = ChartGrid([(0, 1), (-1, 1), (0, 2)], (11, 21, 5))
    assert g.spacing == pytest.approx((0.1, 0.1, 0.5))
    assert g.base_index == (5, 10, 2)
    with pytest.raises(GridError):
        ChartGrid([(0, 1)] * 3, (4, 5, 5))
    with pytest.raises(GridError):
        ChartGrid([(0, 1)] * 3, (5, 5, 5), (0, 2, 2))


def test_constant_has_zero_derivative():
    g = ChartGrid([(0, 1)] * 3, (7, 8, 9))
    f = Field(g, np.full(g.shape + (2,), 3.5))
    for ax in range(3):
        assert np.max(np.abs(partial_derivative(f, ax).values)) == 0.0


def test_quadratic_exactness():
    g = ChartGrid([(0, 1), (-2, 3), (0, 1)], (6, 41, 6))
    u0, u1, u2 = g.coords()
    d = partial_derivative(Field(g, u1 ** 2), 1).scalar()
    assert np.max(np.abs(d - 2 * u1)) <= 1e-10 * np.max(np.abs(u1))


def test_sine_derivative_bound():
    g = ChartGrid([(0, 2), (0, 1), (0, 1)], (201, 5, 5))
    u0 = g.coords()[0]
    d = partial_derivative(Field(g, np.sin(u0)), 0).scalar()
    # the one-sided boundary stencil carries twice the interior constant
    assert np.max(np.abs(d - np.cos(u0))[1:-1]) <= 2e-5


def test_rejects_non_finite():
    g = ChartGrid([(0, 1)] * 3, (5, 5, 5))
    with pytest.raises(GridError):
        Field(g, np.full(g.shape, np.nan))


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), ax=st.integers(0, 2))
def test_linearity(a, b, ax):
    g = ChartGrid([(0, 1)] * 3, (9, 7, 6))
    u0, u1, u2 = g.coords()
    f = Field(g, np.sin(u0 * u1) + u2 ** 3)
    h = Field(g, np.exp(u1) * u2)
    lhs = partial_derivative(a * f + b * h, ax).values
    rhs = a * partial_derivative(f, ax).values + b * partial_derivative(h, ax).values
    assert np.allclose(lhs, rhs, atol=1e-12, rtol=1e-12)


def test_mixed_partials_commute_at_order_two():
    errs = []
    for n in (21, 41, 81):
        g = ChartGrid([(0, 1), (0, 1), (0, 0.2)], (n, n, 5))
        u0, u1, u2 = g.coords()
        f = Field(g, np.sin(2 * u0) * np.exp(u1) + np.cos(u0 * u1))
        a = partial_derivative(partial_derivative(f, 0), 1).values
        b = partial_derivative(partial_derivative(f, 1), 0).values
        exact = 2 * np.cos(2 * u0) * np.exp(u1) - np.sin(u0 * u1) - u0 * u1 * np.cos(u0 * u1)
        errs.append(np.max(np.abs(a[..., 0] - exact)[g.interior_mask()]))
        assert np.max(np.abs(a - b)) < 1e-8
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8)


def test_line_integrate_trivial():
    A = np.zeros((11, 2, 2))
    y = line_integrate(A, np.array([1.0, -2.0]), 0, 4, 0.1)
    assert np.all(y == np.array([1.0, -2.0]))


def test_exponential():
    A = np.ones((101, 1, 1))
    y = line_integrate(A, np.array([1.0]), 0, 0, 0.01)
    assert abs(y[-1, 0] - np.e) <= 1e-8


def test_transport_equation_closed_form():
    # d0 phi1 = 2 Gamma(0,1) phi1 with Gamma(0,1) = 1/2
    u = np.linspace(-1, 1, 201)
    A = np.full((201, 1, 1), 2 * 0.5)
    y = line_integrate(A, np.array([0.7]), 0, 100, u[1] - u[0])
    assert np.max(np.abs(y[:, 0] - 0.7 * np.exp(u))) <= 1e-8


def test_fourth_order_on_linear_coefficients():
    # y' = u y, y(0)=1 -> exp(u^2/2); linear coefficients are interpolated exactly
    errs = []
    for n in (11, 21, 41):
        u = np.linspace(0, 1, n)
        y = line_integrate(u[:, None, None], np.array([1.0]), 0, 0, u[1] - u[0])
        errs.append(abs(y[-1, 0] - np.exp(0.5)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 3.7)


def test_affine_rhs():
    u = np.linspace(0, 1, 51)
    A = np.zeros((51, 1, 1))
    b = np.ones((51, 1))
    y = line_integrate(A, np.array([2.0]), 0, 0, u[1] - u[0], b=b)
    assert np.allclose(y[:, 0], 2 + u, atol=1e-13)


def test_blow_up_reports_node():
    A = np.full((200, 1, 1), 200.0)
    with pytest.raises(BlowUpError) as exc:
        line_integrate(A, np.array([1.0]), 0, 0, 0.1)
    assert exc.value.node is not None and exc.value.node > 0


def test_batched_lines_along_middle_axis():
    A = np.zeros((3, 11, 4, 2, 2))
    A[..., 0, 0] = 1.0
    y0 = np.ones((3, 4, 2))
    y = line_integrate(A, y0, 1, 5, 0.1)
    assert y.shape == (3, 11, 4, 2)
    assert np.allclose(y[:, 10, :, 0], np.exp(0.5), atol=1e-6)
    assert np.allclose(y[..., 1], 1.0)


def test_holonomy_flat_and_commuting():
    g = ChartGrid([(0, 1)] * 3, (6, 6, 6))
    zero = [np.zeros(g.shape + (3, 3)) for _ in range(3)]
    M = plaquette_holonomy(zero, (2, 2, 2), (0, 1), g.spacing)
    assert np.array_equal(M, np.eye(3))
    D = np.diag([1.0, -2.0, 0.5])
    comm = [np.broadcast_to(c * D, g.shape + (3, 3)) for c in (1.0, 2.0, -1.0)]
    M = plaquette_holonomy(comm, (2, 2, 2), (0, 2), g.spacing)
    assert np.max(np.abs(M - np.eye(3))) <= 1e-10
    with pytest.raises(GridError):
        plaquette_holonomy(zero, (5, 2, 2), (0, 1), g.spacing)


def test_csv_round_trip(tmp_path):
    g = ChartGrid([(0, 1)] * 3, (5, 6, 5))
    rng = np.random.default_rng(3)
    f = Field(g, rng.normal(size=g.shape + (3,)) * 10.0 ** rng.integers(-20, 20, size=g.shape + (3,)))
    write_field_csv(tmp_path / "f.csv", f)
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "i0,i1,i2,c0,c1,c2"
    back = read_field_csv(tmp_path / "f.csv", g)
    assert np.array_equal(back.values, f.values)


def test_fourth_order_on_smooth_coefficients():
    # y' = cos(3u) y, y(0) = 1 -> exp(sin(3u)/3); cubic midpoints keep RK4 at fourth order
    errs = []
    for n in (41, 81, 161):
        u = np.linspace(-1, 1, n)
        y = line_integrate(np.cos(3 * u)[:, None, None], np.array([1.0]), 0, n // 2, u[1] - u[0])
        errs.append(np.max(np.abs(y[:, 0] - np.exp(np.sin(3 * u) / 3))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 3.5) and orders[-1] > 3.7


def test_linear_midpoints_are_second_order():
    errs = []
    for n in (21, 41, 81):
        u = np.linspace(-1, 1, n)
        y = line_integrate(np.cos(3 * u)[:, None, None], np.array([1.0]), 0, n // 2, u[1] - u[0],
                           interpolation="linear")
        errs.append(np.max(np.abs(y[:, 0] - np.exp(np.sin(3 * u) / 3))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders > 1.8) & (orders < 2.5))
