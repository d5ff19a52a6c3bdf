"""Honest deformations g^phi of a rank-3 hypersurface into R^{n+2}_nu.

Given a parallel Sbrana section phi, the second fundamental form of g is
diagonal in the conjugate frame,

    alpha^g(X_i, X_i) = <A X_i, X_i> eta_i,    alpha^g(X_i, X_j) = 0 (i != j),
    alpha^g(T, .) = 0 for T in the nullity,

with normal vectors eta_i of Gram <eta_i, eta_j> = 1 + delta_ij / phi_i and the
normal connection

    nabla_{X_j} eta_i = Gamma(j,i) (eta_j - eta_i)                        (i != j)
    nabla_{X_i} eta_i = d_i(1/phi_i)/2 phi_i eta_i - (1/phi_i) sum_{j != i} Gamma(i,j) phi_j eta_j.

In the chart x nullity coordinates (u0, u1, u2, s) the moving frame
(d_0 g, .., d_3 g, eta_0, eta_1, eta_2, g) then obeys a linear system
d_a Y = K_a Y that is integrated from the base point.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .hypersurface import BOUNDARY_LAYER, ImmersionGrid, christoffel, second_fundamental
from .numgrid import differentiate
from .sbrana import DEFAULT_ORDER, AdmissibilityError, DeformationSection, _transport
from .semilin import SemiEuclideanSpace, SignatureError, gram_factor, gram_signature

log = logging.getLogger(__name__)

FRAME_TOL = 1e-6
HONESTY_TOL = 1e-6
RULED_TOL = 1e-8

# rows of the moving frame: tangents d_0..d_3, normals eta_0..eta_2, position
TANGENT_ROWS = slice(0, 4)
ETA_ROWS = slice(4, 7)
POSITION_ROW = 7


class IntegrabilityError(RuntimeError):
    """The frame system is not integrable: the section is not parallel."""


def sbrana_gram(phi):
    """G_ij = 1 + delta_ij / phi_i, broadcasting over leading axes of phi (..., 3)."""
    phi = np.asarray(phi, dtype=float)
    return np.ones(phi.shape + (3,)) + np.eye(3) / phi[..., None, :]


def gram_from_phi(phi, tol=1e-8):
    """Sbrana Gram of an admissible value and the index nu of its rank-2 part."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (3,):
        raise AdmissibilityError("phi has three components")
    if np.min(np.abs(phi)) == 0:
        raise AdmissibilityError(f"component {int(np.argmin(np.abs(phi)))} of phi vanishes")
    G = sbrana_gram(phi)
    rep = gram_signature(G, tol)
    if rep.z != 1:
        raise SignatureError(f"Gram of {phi} has {rep.z} zero eigenvalues (sum is {phi.sum():.3g})")
    return G, rep.q


def _index_field(phi):
    """Pointwise nu (number of negative eigenvalues of the Sbrana Gram)."""
    lam = np.linalg.eigvalsh(sbrana_gram(phi))
    scale = np.max(np.abs(lam), axis=-1, keepdims=True)
    return np.sum(lam < -1e-8 * scale, axis=-1)


@dataclass
class NormalFrameField:
    """eta_i as vectors of R^2_nu along the chart, integrated from the base frame."""

    eta: np.ndarray                  # grid + (3, 2), row i is eta_i
    space: SemiEuclideanSpace
    phi: DeformationSection
    connection: list = field(repr=False, default=None)   # B_a: grid + (3, 3), d_a eta = B_a eta
    same_index: np.ndarray = field(repr=False, default=None)   # nodes where nu equals the base value
    path_dependence: float = 0.0

    @property
    def gram(self):
        return self.space.gram(self.eta)

    def residuals(self, mask=None):
        """(max Gram residual, max |sum phi_i eta_i|) over ``mask``."""
        mask = self.same_index if mask is None else mask & self.same_index
        gres = np.abs(self.gram - sbrana_gram(self.phi.phi))[mask]
        dep = np.abs(np.einsum("...i,...ik->...k", self.phi.phi, self.eta))[mask]
        return float(np.max(gres)), float(np.max(dep))


def normal_connection(coeffs, phi, stencil_order=4):
    """Matrices B_a (grid + (3, 3)) with d_a eta_i = sum_j B_a[i, j] eta_j.

    The diagonal term uses d_a phi_a from the sampled section, so a section
    that is not parallel is represented as it is.
    """
    G = coeffs.Gamma
    h = coeffs.grid.spacing
    B = [np.zeros(coeffs.grid.shape + (3, 3)) for _ in range(3)]
    for a in range(3):
        for i in range(3):
            if i == a:
                continue
            B[a][..., i, a] += G[(a, i)]
            B[a][..., i, i] -= G[(a, i)]
        da = differentiate(phi[..., a], h[a], a, stencil_order)
        # d_a(1/phi_a)/2 * phi_a = -d_a phi_a / (2 phi_a)
        B[a][..., a, a] = -da / (2 * phi[..., a])
        for j in range(3):
            if j != a:
                B[a][..., a, j] = -G[(a, j)] * phi[..., j] / phi[..., a]
    return B


def build_normal_frame(coeffs, section, stencil_order=4, check_paths=True):
    """Integrate the normal connection from the gram_factor frame at the base point."""
    phi = section.phi
    grid = coeffs.grid
    space, E0 = gram_factor(sbrana_gram(section.base_value))
    B = normal_connection(coeffs, phi, stencil_order)
    eta = _transport(B, E0, grid.base_index, grid.spacing, DEFAULT_ORDER)
    dep = 0.0
    if check_paths:
        for other in itertools.permutations(range(3)):
            if other != DEFAULT_ORDER:
                Z = _transport(B, E0, grid.base_index, grid.spacing, other)
                dep = max(dep, float(np.max(np.abs(Z - eta))))
    nu = _index_field(phi)
    same = nu == space.index
    if not same.all():
        log.warning("ambient index changes on %d nodes; those nodes are excluded from frame checks",
                    int(np.sum(~same)))
    return NormalFrameField(eta, space, section, B, same, dep)


# -- the moving frame of g ------------------------------------------------------

@dataclass(frozen=True)
class FrameData:
    """Geometry of f on the base nullity slice needed by the frame system."""

    metric: np.ndarray         # grid + (4, 4)
    christoffel: np.ndarray    # grid + (4, 4, 4), Chr[c, a, b]
    lam: np.ndarray            # grid + (3,), alpha^f(d_a, d_a) for the unit normal
    conjugacy: float           # max |alpha^f(d_a, d_b)|, a != b < 3, relative to max |lam|


def frame_data(f):
    """Slice f's metric, Christoffels and principal values at s = 0."""
    if f.second_fundamental is None:
        second_fundamental(f)
    k = f.s_index
    alpha = f.second_fundamental[:, :, :, k, :, :, 0]
    lam = np.stack([alpha[..., a, a] for a in range(3)], axis=-1)
    off = max(float(np.max(np.abs(alpha[..., a, b]))) for a in range(3) for b in range(3) if a != b)
    chr_ = christoffel(f)[:, :, :, k]
    return FrameData(f.metric[:, :, :, k], chr_, lam, off / float(np.max(np.abs(lam))))


def frame_matrices(data, frame):
    """K_a (grid + (8, 8)) for the three chart axes: d_a Y = K_a Y."""
    shape = data.lam.shape[:3]
    Ginv = np.linalg.inv(data.metric)
    gram = sbrana_gram(frame.phi.phi)
    K = []
    for a in range(3):
        M = np.zeros(shape + (8, 8))
        # d_a t_b = Chr^c_ab t_c + alpha^g(d_a, d_b)
        M[..., TANGENT_ROWS, TANGENT_ROWS] = np.swapaxes(data.christoffel[..., :, a, :], -1, -2)
        M[..., a, 4 + a] += data.lam[..., a]
        # d_a eta_i = -A_{eta_i} d_a + nabla_a eta_i
        for i in range(3):
            M[..., 4 + i, TANGENT_ROWS] = -(Ginv[..., :, a] * (data.lam[..., a] * gram[..., a, i])[..., None])
        M[..., ETA_ROWS, ETA_ROWS] = frame.connection[a]
        M[..., POSITION_ROW, a] = 1.0
        K.append(M)
    return K


def base_frame(data, frame, base):
    """Initial frame at the base point: g = 0, tangents by Cholesky, normals from the eta frame."""
    nu = frame.space.index
    Y0 = np.zeros((8, 6))
    Y0[TANGENT_ROWS, :4] = np.linalg.cholesky(data.metric[base])
    Y0[ETA_ROWS, 4:] = frame.eta[base]
    return Y0, SemiEuclideanSpace(6, nu)


@dataclass
class DeformationBuild:
    """g^phi sampled on f's parameter box, with its build diagnostics."""

    immersion: ImmersionGrid
    frame_values: np.ndarray        # grid + (8, 6) moving frame on the base nullity slice
    compatibility: float            # max frame difference between axis orders (interior)
    integrable: bool
    ruled_residual: float           # max |d_s^2 g|
    conjugacy: float
    tol: float

    @property
    def space(self):
        return self.immersion.target

    def metric_error(self, f, mask=None):
        """max |<dg, dg>_nu - metric of f| over a chart mask (default: outside the boundary layer)."""
        mask = f.grid.interior_mask(BOUNDARY_LAYER) if mask is None else mask
        m = np.broadcast_to(mask[..., None], f.shape)
        return float(np.max(np.abs(self.immersion.metric - f.metric)[m]))


def integrate_deformation(f, coeffs, frame, tol=None, mask=None, require_integrable=False):
    """Integrate the moving frame of g^phi over the chart and rule it along the nullity.

    The compatibility residual is the largest difference, over ``mask``
    (default: the chart outside the boundary layer), between the frames
    transported along the six axis orders; it
    is compared with ``tol`` (default: 1e-3 of the frame size) to decide
    integrability.  With ``require_integrable`` a failure raises.
    """
    grid = coeffs.grid
    if f.grid.shape != grid.shape:
        raise ValueError("f and the coefficients live on different grids")
    data = frame_data(f)
    K = frame_matrices(data, frame)
    Y0, space = base_frame(data, frame, grid.base_index)
    Y = _transport(K, Y0, grid.base_index, grid.spacing, DEFAULT_ORDER)
    mask = grid.interior_mask(BOUNDARY_LAYER) if mask is None else mask
    comp = 0.0
    for other in itertools.permutations(range(3)):
        if other != DEFAULT_ORDER:
            Z = _transport(K, Y0, grid.base_index, grid.spacing, other)
            comp = max(comp, float(np.max(np.abs(Z - Y)[mask])))
    tol = 1e-3 * float(np.max(np.abs(Y[mask]))) if tol is None else tol
    integrable = comp <= tol
    if not integrable:
        msg = f"frame system not integrable: compatibility residual {comp:.3e} > {tol:.1e}"
        if require_integrable:
            raise IntegrabilityError(msg)
        log.warning(msg)
    # the nullity leaves are straight lines: g(x, s) = g(x, s0) + (s - s0) d_s g(x, s0)
    ds = f.s - f.s[f.s_index]
    pos = Y[..., POSITION_ROW, None, :] + ds[:, None] * Y[..., 3, None, :]
    g = ImmersionGrid(f.grid, f.s, space, pos)
    ruled = float(np.max(np.abs(g.d(g.d(pos, 3), 3))))
    if ruled > RULED_TOL:
        log.warning("nullity lines of g are not straight: %.2e", ruled)
    return DeformationBuild(g, Y, comp, integrable, ruled, data.conjugacy, tol)


# -- honesty --------------------------------------------------------------------

@dataclass(frozen=True)
class HonestyReport:
    honest: bool
    xi_gram: np.ndarray             # grid-slice + (3, 3), <xi_i, xi_j> in T_g^perp + T_f^perp
    min_relative_eigenvalue: float  # min over nodes of min |eig| / max |eig|
    phi_gram_error: float           # max |xi_gram - diag(1/phi)| (nan without phi)
    flatness: float                 # max |<beta(X,Y),beta(Z,W)> - <beta(X,W),beta(Z,Y)>|
    tol: float


def _lift(f):
    """c_a = -G_as / G_ss so that X_a = d_a + c_a d_s is orthogonal to the nullity."""
    G = f.metric
    return -G[..., :3, 3] / G[..., 3:4, 3]


def honesty_check(f, g, phi=None, tol=HONESTY_TOL, mask=None):
    """Gram of xi_i = beta(X_i, X_i) / <A X_i, X_i> in W = T_g^perp + T_f^perp.

    W carries <(a, b), (c, d)> = <a, c>_g - <b, d>_f.  g is honest when this
    3x3 Gram is nondegenerate; for a Sbrana deformation it equals diag(1/phi).
    """
    if g.grid.shape != f.grid.shape or len(g.s) != len(f.s):
        raise ValueError("frames misaligned: f and g are sampled on different boxes")
    for imm in (f, g):
        if imm.second_fundamental is None:
            second_fundamental(imm)
    k = f.s_index
    m = f.grid.interior_mask(BOUNDARY_LAYER) if mask is None else mask
    c = _lift(f)[:, :, :, k][m]                              # (n, 3)
    af = f.second_fundamental[:, :, :, k][m][..., 0]         # (n, 4, 4)
    ag = g.second_fundamental[:, :, :, k][m]                 # (n, 4, 4, 2)
    ng = g.normal_gram[:, :, :, k][m]                        # (n, 2, 2)
    X = np.zeros(c.shape[:1] + (3, 4))
    X[:, :, :3] = np.eye(3)
    X[:, :, 3] = c
    lam = np.einsum("nia,nab,nib->ni", X, af, X)
    ag_X = np.einsum("nia,nabr,nib->nir", X, ag, X)
    eta_gram = np.einsum("nir,nrs,njs->nij", ag_X, ng, ag_X)
    xi = eta_gram / (lam[:, :, None] * lam[:, None, :]) - 1.0
    ev = np.sort(np.abs(np.linalg.eigvalsh(xi)), axis=-1)
    rel = ev[:, 0] / np.maximum(ev[:, -1], 1e-300)
    minrel = float(np.min(rel))
    honest = minrel > tol
    perr = float("nan")
    if phi is not None:
        target = np.zeros_like(xi)
        target[:, [0, 1, 2], [0, 1, 2]] = 1.0 / np.asarray(phi)[m]
        perr = float(np.max(np.abs(xi - target)))
    # flatness of beta over the coordinate frame
    bg = np.einsum("nabr,nrs,ncds->nabcd", ag, ng, ag)
    bf = np.einsum("nab,ncd->nabcd", af, af)
    beta = bg - bf
    flat = float(np.max(np.abs(beta - np.einsum("nabcd->nadcb", beta))))
    return HonestyReport(honest, xi, minrel, perr, flat, tol)


def perturbed_section(section, eps=1e-2, width=0.05):
    """Non-parallel control: phi + eps * bump * (1, -1, 0), keeping sum(phi) = -1."""
    phi = section.phi.copy()
    n = phi.shape[:3]
    idx = np.meshgrid(*[np.arange(k) - b for k, b in zip(n, [x // 2 for x in n])], indexing="ij")
    r2 = sum(((i / (k - 1)) ** 2) for i, k in zip(idx, n))
    bump = np.exp(-r2 / width)
    phi[..., 0] += eps * bump
    phi[..., 1] -= eps * bump
    return DeformationSection(phi, phi[tuple(x // 2 for x in n)], section.ambient_index, float("nan"),
                              float(np.max(np.abs(phi.sum(-1) + 1))), float(np.min(np.abs(phi))))


def cylinder_composition(f, radius=0.5, axis=None):
    """Negative control H o f: H bends R^N isometrically onto a cylinder in R^{N+1}.

    H(x) = (x without x_k, R sin(x_k / R), R (1 - cos(x_k / R))) for the
    coordinate k (default: the one along which f varies most).  H o f is
    isometric to f but not honest: beta has a rank-one degenerate image.
    """
    P = f.positions
    k = int(np.argmax(np.ptp(P.reshape(-1, P.shape[-1]), axis=0))) if axis is None else axis
    rest = np.delete(P, k, axis=-1)
    x = P[..., k]
    bent = np.concatenate([rest, (radius * np.sin(x / radius))[..., None],
                           (radius * (1 - np.cos(x / radius)))[..., None]], axis=-1)
    return ImmersionGrid(f.grid, f.s, SemiEuclideanSpace(f.target.dim + 1, f.target.index), bent)
