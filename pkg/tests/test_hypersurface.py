import numpy as np
import pytest

from rigidlab.families import SeparableSphereNet
from rigidlab.hypersurface import (
    ComplexSplittingError, ImmersionGrid, gauss_equation_residual, gauss_parametrize,
    nullity_of_curvature, second_fundamental, splitting_tensors,
)
from rigidlab.numgrid import ChartGrid, Field
from rigidlab.conjnet import ConjugateNet, NetCoefficients
from rigidlab.semilin import SemiEuclideanSpace


def param_box(h, half=0.2):
    g = ChartGrid.centered(half, h)
    s = np.linspace(-2 * h, 2 * h, 5)
    u = np.meshgrid(*[g.axis(i) for i in range(3)], s, indexing="ij")
    return g, s, u


def family_build(h):
    g = ChartGrid.centered(0.24, h)
    return gauss_parametrize(SeparableSphereNet().net(g), (-2 * h, 2 * h), 5)


@pytest.fixture(scope="module")
def fine():
    imm = family_build(0.01)
    rank = second_fundamental(imm)
    return imm, rank


def test_flat_immersion_has_full_nullity():
    g, s, u = param_box(0.05)
    M = np.random.default_rng(0).normal(size=(5, 4))
    pos = np.einsum("ab,b...->...a", M, np.array(u)) + 1.0
    imm = ImmersionGrid(g, s, SemiEuclideanSpace(5, 0), pos)
    rank = second_fundamental(imm)
    assert np.max(np.abs(imm.second_fundamental)) <= 1e-9
    assert np.all(rank.nullity == 4)
    assert np.all(nullity_of_curvature(imm).dim == 4)


def test_sphere_patch_is_umbilic():
    err = []
    for h in (0.04, 0.02):
        g, s, u = param_box(h)
        x = np.stack(list(u) + [np.ones_like(u[0])], axis=-1)
        pos = x / np.linalg.norm(x, axis=-1, keepdims=True)
        imm = ImmersionGrid(g, s, SemiEuclideanSpace(5, 0), pos, normal_frame=pos[..., None, :])
        rank = second_fundamental(imm)
        m = imm.mask()
        # alpha(X, Y) = -<X, Y> N on the unit sphere
        err.append(np.max(np.abs(imm.second_fundamental[..., 0] + imm.metric)[m]))
        assert np.all(rank.nullity[m] == 0)
    assert err[1] <= 1e-4 and np.log2(err[0] / err[1]) >= 1.8


def test_cylinder_is_a_product():
    # S^3 x R in R^5: relative nullity and curvature nullity are both the R factor; C_T = 0
    g, s, u = param_box(0.04)
    y = np.stack(list(u[:3]) + [np.ones_like(u[0])], axis=-1)
    y = y / np.linalg.norm(y, axis=-1, keepdims=True)
    pos = np.concatenate([y, u[3][..., None]], axis=-1)
    nrm = np.concatenate([y, np.zeros_like(u[3])[..., None]], axis=-1)[..., None, :]
    imm = ImmersionGrid(g, s, SemiEuclideanSpace(5, 0), pos, normal_frame=nrm)
    rank = second_fundamental(imm)
    m = imm.mask()
    assert np.all(rank.nullity[m] == 1)
    cn = nullity_of_curvature(imm, rank)
    assert np.all(cn.dim[m] == 1)
    assert np.max(np.abs(splitting_tensors(imm).C[m])) <= 1e-8
    assert not splitting_tensors(imm).generic


def test_collapsed_support_is_flagged():
    # h spans a great S^3 and gamma = <p, h> with p in that R^4: f collapses to a line
    g = ChartGrid.centered(0.2, 0.05)
    u = g.coords()
    F = np.stack([1 + 0.5 * u[0], 0.7 * u[1], np.cos(u[2]), np.sin(u[2]), np.zeros_like(u[0])], -1)
    h = F / np.linalg.norm(F, axis=-1, keepdims=True)
    p = np.array([0.3, -0.2, 0.5, 0.1, 0.0])
    net = ConjugateNet(Field(g, h), NetCoefficients.zeros(g), Field(g, h @ p), 4)
    imm = gauss_parametrize(net, (-0.1, 0.1), 5)
    assert imm.flags["singular"].all()


def test_unit_normal(fine):
    imm, _ = fine
    N = imm.normal_frame[..., 0, :]
    assert np.max(np.abs(np.einsum("...ka,...a->...k", imm.tangent_frame, N))) <= 1e-8
    assert np.max(np.abs(np.sum(N * N, -1) - 1)) <= 1e-8
    assert not imm.flags["singular"].any()


def test_gauss_map_defect_converges():
    d = [np.max(np.abs(family_build(h).flags["gauss_map_defect"])) for h in (0.04, 0.02)]
    assert np.log2(d[0] / d[1]) >= 1.8


def test_s_direction_in_relative_nullity(fine):
    imm, rank = fine
    m = imm.mask()
    assert np.max(np.abs(imm.second_fundamental[..., 3, :, :])[m]) <= 1e-6
    assert np.all(rank.nullity[m] == 1)


def test_splitting_eigenframe(fine):
    imm, _ = fine
    rep = splitting_tensors(imm)
    assert rep.generic
    m = imm.mask()
    # lifted eigenframe diagonalizes alpha
    L = np.zeros(imm.shape + (3, 4))
    L[..., :3, :3] = rep.eigenframe
    L[..., :, 3] = np.einsum("...ab,...b->...a", rep.eigenframe, rep.lift)
    aX = np.einsum("...ia,...jb,...abr->...ijr", L[m], L[m], imm.second_fundamental[m])
    off = aX[..., 0] * (1 - np.eye(3))
    assert np.max(np.abs(off)) <= 1e-6
    # rescaled eigenvectors are the coordinate vectors and do not move along s
    assert np.max(np.abs(rep.eigenframe[m] - np.eye(3))) <= 1e-6
    fr = rep.eigenframe[imm.mask()].reshape(-1, 5, 3, 3)
    assert np.max(np.abs(fr - fr[:, 2:3])) <= 1e-6


def test_curvature_nullity_equals_relative_nullity(fine):
    imm, rank = fine
    cn = nullity_of_curvature(imm, rank)
    m = imm.mask()
    assert np.all(cn.dim[m] == rank.nullity[m])
    assert cn.contains_relative_nullity[m].all()


def test_gauss_equation_order_two():
    res = []
    for h in (0.04, 0.02):
        imm = family_build(h)
        second_fundamental(imm)
        res.append(gauss_equation_residual(imm)[0])
    assert np.log2(res[0] / res[1]) >= 1.8


def test_complex_splitting_aborts():
    # screw coordinates on flat space: moving along s rotates the (u0, u1) plane
    g, s, u = param_box(0.05)
    pos = np.stack([u[0] * np.cos(u[3]) - u[1] * np.sin(u[3]),
                    u[0] * np.sin(u[3]) + u[1] * np.cos(u[3]),
                    u[2], u[3], np.zeros_like(u[0])], -1)
    with pytest.raises(ComplexSplittingError):
        splitting_tensors(ImmersionGrid(g, s, SemiEuclideanSpace(5, 0), pos))
