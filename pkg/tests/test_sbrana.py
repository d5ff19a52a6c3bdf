import numpy as np
import pytest

from rigidlab.conjnet import PAIRS
from rigidlab.corpus import constant_gamma, l0_coefficients, random_gamma, seeded_section
from rigidlab.families import SeparableSphereNet
from rigidlab.numgrid import ChartGrid, plaquette_holonomy
from rigidlab.sbrana import (
    AdmissibilityError, PathDependenceError, SbranaBundle, TypeBoundError, ambient_index,
    check_admissible, check_type_bound, curvature_field, deformation_section, deformation_space,
    flat_subbundle, line_parallel_tests, line_section_base, parallel_transport,
)


def analyze(coeffs):
    b = SbranaBundle(coeffs)
    return b, flat_subbundle(b), line_parallel_tests(b)


GRID = ChartGrid.centered(0.24, 0.02)
L0_CONSTANT = {(0, 1): 0.3, (0, 2): 0.3, (1, 0): 0.5, (1, 2): -0.2, (2, 0): 0.1, (2, 1): 0.7}


def test_axis_matrices_conserve_sum():
    b = SbranaBundle(random_gamma(GRID, np.random.default_rng(0)))
    for A in b.connection:
        assert np.max(np.abs(A.sum(axis=-2))) <= 1e-15


def test_zero_gamma_transport_is_constant():
    b = SbranaBundle(constant_gamma(GRID, {}))
    phi0 = np.array([-0.5, 0.2, -0.7])
    tr = parallel_transport(b, phi0)
    assert np.max(np.abs(tr.values - phi0)) == 0.0
    assert tr.path_dependence == 0.0


def test_sum_conserved_for_random_gamma():
    b = SbranaBundle(random_gamma(GRID, np.random.default_rng(1)))
    tr = parallel_transport(b, np.full(3, -1 / 3), check_paths=False)
    assert np.max(np.abs(tr.values.sum(axis=-1) + 1)) <= 1e-10


def test_exponential_closed_form():
    c = 0.4
    b = SbranaBundle(constant_gamma(GRID, {(0, 1): c, (0, 2): c}))
    phi0 = np.array([-0.6, 0.3, -0.7])
    u0 = GRID.coords()[0]
    e = np.exp(2 * c * (u0 - GRID.base_point[0]))
    exact = np.stack([-1 - (phi0[1] + phi0[2]) * e, phi0[1] * e, phi0[2] * e], axis=-1)
    assert np.max(np.abs(parallel_transport(b, phi0).values - exact)) <= 1e-8


def test_asserted_flatness_raises_on_curved_bundle():
    b = SbranaBundle(random_gamma(GRID, np.random.default_rng(2)))
    with pytest.raises(PathDependenceError):
        parallel_transport(b, np.array([-0.5, 0.2, -0.7]), assert_flat=True)


def test_curvature_vanishes_for_trivial_connections():
    assert all(np.max(np.abs(F)) == 0.0 for F in curvature_field(SbranaBundle(constant_gamma(GRID, {}))).values())
    # constant commuting axis matrices
    D = np.diag([1.0, -2.0, 0.5])
    conn = [np.broadcast_to(c * D, GRID.shape + (3, 3)).copy() for c in (1.0, 0.3, -0.7)]
    b = SbranaBundle(constant_gamma(GRID, {}), connection=conn)
    # the stencil applied to a constant leaves round-off of order eps / h
    assert all(np.max(np.abs(F)) <= 1e-12 for F in curvature_field(b).values())


def test_curvature_matches_holonomy():
    errs = []
    for h in (0.04, 0.02, 0.01):
        g = ChartGrid.centered(0.12, h)
        b = SbranaBundle(random_gamma(g, np.random.default_rng(3)))
        F = b.curvature
        c = g.base_index
        err = 0.0
        for (i, j) in PAIRS:
            M = plaquette_holonomy(b.connection, c, (i, j), g.spacing)
            est = (np.eye(3) - M) / (g.spacing[i] * g.spacing[j])
            err = max(err, float(np.max(np.abs(est - F[(i, j)][c]))))
        errs.append(err)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.9)


def test_flat_subbundle_zero_gamma():
    _, fl, lr = analyze(constant_gamma(GRID, {}))
    assert fl.rank == 3 and fl.type_t == 2 and fl.oracle_rank == 3
    assert lr.index_set == (0, 1, 2)


def test_flat_subbundle_constant_l0():
    _, fl, lr = analyze(constant_gamma(GRID, L0_CONSTANT))
    assert fl.rank == fl.oracle_rank >= 1
    # the line L_0 lies in the flat fiber
    v = line_section_base(0) / np.sqrt(2)
    assert np.linalg.norm(v - fl.base_basis @ (fl.base_basis.T @ v)) <= 1e-8
    assert lr.index_set == (0,)


def test_flat_subbundle_random_gamma():
    _, fl, _ = analyze(random_gamma(GRID, np.random.default_rng(4)))
    assert fl.rank <= 1 and fl.rank == fl.oracle_rank


@pytest.mark.parametrize("lines, rank", [((), 1), ((0,), 2), ((0, 1), 3)])
def test_seeded_sections(lines, rank):
    ss = seeded_section(GRID, np.random.default_rng(5), lines)
    b, fl, lr = analyze(ss.coeffs)
    assert fl.rank == fl.oracle_rank == rank
    assert fl.admits_phi
    assert set(lines) <= set(lr.index_set) and not lr.inconclusive
    assert np.max(np.abs(fl.parallel_residual)) <= 1e-6
    d = deformation_section(b, ss.phi[GRID.base_index], assert_flat=True)
    assert np.max(np.abs(d.phi - ss.phi)) <= 1e-8
    assert d.sum_drift <= 1e-8
    check_type_bound(fl.type_t, lr.index_set)


def test_family_bundle_is_flat_with_three_lines():
    _, fl, lr = analyze(SeparableSphereNet().net(GRID).coeffs)
    assert fl.rank == 3 and lr.index_set == (0, 1, 2)


def test_line_tests_zero_and_violations():
    rng = np.random.default_rng(6)
    _, _, lr = analyze(l0_coefficients(GRID, rng))
    assert 0 in lr.index_set
    for kind in ("laplace", "mixed"):
        _, _, lr = analyze(l0_coefficients(GRID, rng, violate=kind))
        assert 0 not in lr.index_set and not lr.inconclusive
    # Gamma(0,1) != Gamma(0,2) at a single region already fails the first condition
    _, _, lr = analyze(l0_coefficients(GRID, rng, violate="laplace"))
    assert lr.laplace[0] > lr.tol


def test_deformation_space_zero_gamma():
    _, fl, _ = analyze(constant_gamma(GRID, {}))
    O = deformation_space(fl)
    assert O.dim == 2 and not O.empty and len(O.excluded) == 3
    y = O.point([0.3, -0.4])
    assert abs(y.sum() + 1) <= 1e-12
    # each excluded locus is the zero set of one component
    for i, (a, c) in enumerate(O.excluded):
        assert np.allclose(a, O.directions[i]) and np.isclose(c, O.origin[i])


def test_deformation_space_single_section():
    ss = seeded_section(GRID, np.random.default_rng(7), ())
    _, fl, _ = analyze(ss.coeffs)
    O = deformation_space(fl)
    assert O.dim == 0
    assert np.allclose(O.origin, ss.phi[GRID.base_index], atol=1e-8)


def test_deformation_space_line():
    ss = seeded_section(GRID, np.random.default_rng(8), (0,))
    b, fl, _ = analyze(ss.coeffs)
    O = deformation_space(fl)
    assert O.dim == 1
    for theta in (-0.5, 0.25, 1.0):
        y = O.point([theta])
        d = deformation_section(b, y)
        assert d.path_dependence <= 1e-7 and d.sum_drift <= 1e-8


def test_deformation_space_empty_without_phi():
    _, fl, _ = analyze(l0_coefficients(GRID, np.random.default_rng(9)))
    assert deformation_space(fl).empty
    _, fl, _ = analyze(random_gamma(GRID, np.random.default_rng(10)))
    assert deformation_space(fl).empty


def test_type_bound_check():
    assert check_type_bound(2, (0, 1, 2))
    with pytest.raises(TypeBoundError):
        check_type_bound(0, (0, 1))


def test_admissibility_and_index():
    with pytest.raises(AdmissibilityError):
        check_admissible([-0.5, -0.5, 0.0])
    with pytest.raises(AdmissibilityError):
        check_admissible([-0.5, -0.4, 0.3])
    assert ambient_index([-1 / 3, -1 / 3, -1 / 3]) == 2
    assert ambient_index([1.0, -0.5, -1.5]) == 1
    assert ambient_index([0.5, 0.5, -2.0]) == 0
