"""Immersions sampled on chart x nullity grids: Gauss parametrization, second fundamental form,
splitting tensors and curvature nullity.

Parameter space is four-dimensional: the three conjugate coordinates of the
chart plus the nullity parameter ``s``.  All arrays carry the grid shape
(n0, n1, n2, ns) in front.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numgrid import ChartGrid, GridError, differentiate
from .semilin import SemiEuclideanSpace

log = logging.getLogger(__name__)

RANK_RTOL = 1e-3
RANK_ATOL = 1e-9
STENCIL_ORDER = 4
# cells near the chart boundary reached by one-sided closures of three nested
# derivatives (tangents, metric, Christoffels); geometry there is less accurate
BOUNDARY_LAYER = 6


class ImmersionError(ValueError):
    pass


class ComplexSplittingError(ImmersionError):
    """The splitting tensor has complex eigenvalues; that case is out of scope."""


@dataclass
class ImmersionGrid:
    """Sampled immersion of the 4-dimensional parameter box into R^N_nu."""

    grid: ChartGrid
    s: np.ndarray
    target: SemiEuclideanSpace
    positions: np.ndarray                  # (n0, n1, n2, ns, N)
    normal_frame: np.ndarray = None        # (..., codim, N)
    tangent_frame: np.ndarray = field(default=None, repr=False)   # (..., 4, N)
    metric: np.ndarray = field(default=None, repr=False)          # (..., 4, 4)
    second_fundamental: np.ndarray = field(default=None, repr=False)  # (..., 4, 4, codim)
    flags: dict = field(default_factory=dict)
    stencil_order: int = STENCIL_ORDER

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.shape[:4] != self.shape:
            raise GridError(f"positions {self.positions.shape} do not match grid {self.shape}")
        if self.positions.shape[-1] != self.target.dim:
            raise GridError("positions do not live in the target space")
        if len(self.s) < 5:
            raise GridError("need at least 5 nullity samples")
        if self.tangent_frame is None:
            self.tangent_frame = np.stack([self.d(self.positions, a) for a in range(4)], axis=-2)
        if self.metric is None:
            self.metric = self.target.gram(self.tangent_frame)
        if self.normal_frame is None:
            self.normal_frame = normal_frame_from_tangents(self.target, self.tangent_frame)

    @property
    def shape(self):
        return self.grid.shape + (len(self.s),)

    @property
    def spacing(self):
        return self.grid.spacing + (float(self.s[1] - self.s[0]),)

    @property
    def s_index(self):
        """Index of s = 0 (or the sample nearest to it)."""
        return int(np.argmin(np.abs(self.s)))

    def d(self, arr, axis):
        """Derivative of a grid-leading array along parameter ``axis`` (0..3)."""
        return differentiate(arr, self.spacing[axis], axis, self.stencil_order)

    def mask(self, margin=2):
        """Chart interior (``margin`` cells) for every s sample."""
        return np.broadcast_to(self.grid.interior_mask(margin)[..., None], self.shape)

    @property
    def normal_gram(self):
        return self.target.gram(self.normal_frame)


def normal_frame_from_tangents(space, tangents, rtol=1e-10):
    """Per-node basis of the space-orthogonal complement of the tangent vectors."""
    J = space.signs
    flat = tangents.reshape((-1,) + tangents.shape[-2:]) * J
    _, _, vt = np.linalg.svd(flat)
    k = tangents.shape[-2]
    return vt[:, k:, :].reshape(tangents.shape[:-2] + (space.dim - k, space.dim))


def _cofactor_normal(vectors):
    """Vector orthogonal to the rows of (..., N-1, N), via cofactors; |result| = volume."""
    N = vectors.shape[-1]
    out = np.empty(vectors.shape[:-2] + (N,))
    for k in range(N):
        m = np.concatenate([vectors, np.broadcast_to(np.eye(N)[k], vectors.shape[:-2] + (1, N))], axis=-2)
        out[..., k] = np.linalg.det(m)
    return out


def gauss_parametrize(net, s_range=(-0.05, 0.05), s_resolution=5, tol=RANK_RTOL, stencil_order=STENCIL_ORDER):
    """Hypersurface f(u, s) = gamma h + h_*(grad gamma) + s xi built from a spherical net.

    ``xi`` is the unit normal of h(L^3) in S^n for n = 4, oriented so that
    (d0 h, d1 h, d2 h, xi, h) is a positive frame of R^5.
    """
    grid = net.grid
    h = net.h.values
    if h.shape[-1] != 5:
        raise ImmersionError("the Gauss parametrization here needs h: L^3 -> S^4 (5 components)")
    gam = net.gamma.scalar()
    dh = np.stack([differentiate(h, grid.spacing[a], a, stencil_order) for a in range(3)], axis=-2)
    dg = np.stack([differentiate(gam, grid.spacing[a], a, stencil_order) for a in range(3)], axis=-1)
    hmet = np.einsum("...ia,...ja->...ij", dh, dh)
    sv = np.linalg.svd(dh, compute_uv=False)
    degenerate = sv[..., -1] <= tol * sv[..., 0]
    if np.any(degenerate):
        log.warning("h fails to be an immersion at %d nodes", int(degenerate.sum()))
    hinv = np.linalg.inv(np.where(degenerate[..., None, None], np.eye(3), hmet))
    grad = np.einsum("...ij,...j,...ia->...a", hinv, dg, dh)
    cof = _cofactor_normal(np.concatenate([dh, h[..., None, :]], axis=-2))
    # cofactor rows are (d0h, d1h, d2h, h, e_k); reorder to (d0h, d1h, d2h, e_k, h): one swap
    cof = -cof
    norm = np.linalg.norm(cof, axis=-1)
    xi = cof / np.where(norm > 0, norm, 1.0)[..., None]
    s = np.linspace(s_range[0], s_range[1], s_resolution)
    base = gam[..., None] * h + grad
    pos = base[..., None, :] + s[:, None] * xi[..., None, :]
    normal = np.broadcast_to(h[..., None, None, :], grid.shape + (s_resolution, 1, 5))
    spacing = grid.spacing + (float(s[1] - s[0]),)
    tangents = np.stack([differentiate(pos, spacing[a], a, stencil_order) for a in range(4)], axis=-2)
    # <df, h> = d gamma - <grad gamma, dh> vanishes identically; the sampled
    # derivatives only satisfy it to stencil accuracy, so the defect is
    # recorded and removed.
    defect = np.einsum("...ka,...a->...k", tangents, normal[..., 0, :])
    tangents = tangents - defect[..., None] * normal
    imm = ImmersionGrid(grid, s, SemiEuclideanSpace(5, 0), pos, normal_frame=np.array(normal),
                        tangent_frame=tangents, stencil_order=stencil_order)
    jac = np.linalg.svd(imm.tangent_frame, compute_uv=False)
    singular = jac[..., -1] <= tol * jac[..., 0]
    imm.flags.update({
        "h_degenerate": degenerate,
        "singular": singular,
        "xi": xi,
        "support_gradient": grad,
        "h_metric": hmet,
        "gauss_map_defect": defect,
    })
    if np.any(singular):
        log.warning("Gauss parametrization singular at %d nodes", int(singular.sum()))
    return imm


@dataclass(frozen=True)
class RankReport:
    nullity: np.ndarray      # per node dimension of the relative nullity
    rank: np.ndarray         # 4 - nullity
    singular_values: np.ndarray
    rtol: float
    atol: float
    kernels: np.ndarray = field(repr=False, default=None)   # (..., 4, 4) rows = kernel basis, padded


def _threshold(sv, rtol, atol):
    return np.maximum(rtol * sv[..., :1], atol)


def second_fundamental(imm, rtol=RANK_RTOL, atol=RANK_ATOL):
    """Fill ``imm.second_fundamental`` with normal coordinates of the Hessian's normal part.

    alpha[..., a, b, r] is the coefficient of normal_frame[r] in alpha(d_a, d_b).
    """
    P = imm.positions
    first = [imm.d(P, a) for a in range(4)]
    nrm = imm.normal_frame
    ngram = imm.normal_gram
    ngram_inv = np.linalg.inv(ngram)
    alpha = np.empty(imm.shape + (4, 4, nrm.shape[-2]))
    for a in range(4):
        for b in range(a, 4):
            hess = imm.d(first[a], b)
            proj = np.einsum("...a,...ra,a->...r", hess, nrm, imm.target.signs)
            coeff = np.einsum("...rs,...s->...r", ngram_inv, proj)
            alpha[..., a, b, :] = coeff
            alpha[..., b, a, :] = coeff
    imm.second_fundamental = alpha
    flat = alpha.reshape(imm.shape + (4, -1))
    _, sv, vt = np.linalg.svd(flat)
    nullity = np.sum(sv <= _threshold(sv, rtol, atol), axis=-1)
    return RankReport(nullity, 4 - nullity, sv, rtol, atol, vt)


def christoffel(imm):
    """Christoffel symbols Chr[..., c, a, b] of the induced metric in parameter coordinates."""
    G = imm.metric
    dG = np.stack([imm.d(G, a) for a in range(4)], axis=-3)   # dG[..., a, i, j] = d_a G_ij
    Ginv = np.linalg.inv(G)
    lower = 0.5 * (np.einsum("...adb->...dab", dG) + np.einsum("...bda->...dab", dG)
                   - np.einsum("...dab->...dab", dG))
    # lower[..., d, a, b] = 1/2 (d_a G_db + d_b G_da - d_d G_ab)
    return np.einsum("...cd,...dab->...cab", Ginv, lower)


@dataclass(frozen=True)
class SplittingReport:
    C: np.ndarray              # (..., 3, 3) in the lifted coordinate basis X_a = d_a + c_a d_s
    eigenvalues: np.ndarray    # (..., 3), eigenvalue attached to coordinate direction a
    eigenframe: np.ndarray     # (..., 3, 3), row a = eigenvector matched to d_a, scaled to unit u_a part
    generic: bool
    min_gap: float
    offdiag: float             # max relative off-diagonal part of C in the coordinate basis
    lift: np.ndarray           # (..., 3) c_a with X_a = d_a + c_a d_s


def splitting_tensors(imm, region=None, gap_tol=1e-3, zero_tol=1e-8):
    """Splitting tensor C_T(X) = -(nabla_X T) projected off the nullity, for T = d_s."""
    Chr = christoffel(imm)
    G = imm.metric
    lift = -G[..., :3, 3] / G[..., 3, 3][..., None]
    # nabla_{X_a} d_s = nabla_{d_a} d_s + c_a nabla_{d_s} d_s; project on span(X_b): coefficient of d_b
    nab = Chr[..., :, :3, 3] + lift[..., None, :] * Chr[..., :, 3:4, 3]
    C = -np.swapaxes(nab[..., :3, :], -1, -2)      # C[..., a, b]: component b of C(X_a)
    C = np.swapaxes(C, -1, -2)                       # matrix acting on column coefficient vectors
    mask = imm.mask() if region is None else region
    Cm = C[mask]
    lam, vec = np.linalg.eig(Cm)
    scale = np.max(np.abs(Cm)) if Cm.size else 0.0
    if scale > zero_tol and np.max(np.abs(lam.imag)) > 1e-8 * scale:
        raise ComplexSplittingError("complex case out of scope: splitting tensor has complex eigenvalues")
    lam, vec = lam.real, vec.real
    # match eigenvectors to coordinate directions by their dominant component
    order = np.argmax(np.abs(vec), axis=-2)            # (..., 3): for each eigenvector, its axis
    frame = np.zeros_like(vec)
    vals = np.zeros(lam.shape)
    idx = np.arange(len(lam))
    for k in range(3):
        ax = order[:, k]
        v = vec[:, :, k] / vec[idx, ax, k][:, None]
        frame[idx, ax, :] = v
        vals[idx, ax] = lam[:, k]
    diag = np.abs(np.diagonal(Cm, axis1=-2, axis2=-1))
    off = np.abs(Cm - np.einsum("...ii->...i", Cm)[..., None] * np.eye(3))
    offdiag = float(np.max(off) / max(np.max(diag), 1e-300)) if Cm.size else 0.0
    gaps = np.min(np.abs(np.sort(lam, -1)[:, 1:] - np.sort(lam, -1)[:, :-1]), axis=-1) if lam.size else np.zeros(0)
    rel_gap = float(np.min(gaps) / max(scale, 1e-300)) if gaps.size else 0.0
    generic = bool(scale > zero_tol and rel_gap > gap_tol)
    full_vals = np.full(imm.shape + (3,), np.nan)
    full_frame = np.full(imm.shape + (3, 3), np.nan)
    full_vals[mask] = vals
    full_frame[mask] = frame
    return SplittingReport(C, full_vals, full_frame, generic, rel_gap, offdiag, lift)


def _riemann_from(Chr, dChr, metric):
    """R[..., a, b, c, d] from Christoffels, their derivatives dChr[..., e, c, a, b] = d_e Chr^c_ab and the metric."""
    # R^d_{c a b} with R(d_a, d_b) d_c = nabla_a nabla_b d_c - nabla_b nabla_a d_c
    term = (np.einsum("...adbc->...dcab", dChr) - np.einsum("...bdac->...dcab", dChr)
            + np.einsum("...dae,...ebc->...dcab", Chr, Chr) - np.einsum("...dbe,...eac->...dcab", Chr, Chr))
    # term[..., d, c, a, b] = R^d_c(a, b)
    return np.einsum("...fd,...dcab->...abcf", metric, term)


def riemann_slabs(imm, size=8):
    """Yield (rows, R) over slabs of the first chart axis; R as in ``riemann`` restricted to the rows.

    Christoffel derivatives are taken on each slab widened by two rows, the
    reach of the five-point stencil, so every kept row sees the same stencil
    as on the whole grid and the slabs agree exactly with the full tensor.
    """
    Chr = christoffel(imm)
    n = imm.shape[0]
    for start in range(0, n, size):
        stop = min(start + size, n)
        hi = min(n, stop + 2)
        lo = max(0, min(start - 2, hi - 5))
        window = Chr[lo:hi]
        dChr = np.stack([imm.d(window, a)[start - lo:stop - lo] for a in range(4)], axis=-4)
        yield slice(start, stop), _riemann_from(Chr[start:stop], dChr, imm.metric[start:stop])


def riemann(imm):
    """Lowered curvature R[..., a, b, c, d] = <R(d_a, d_b) d_c, d_d>."""
    return np.concatenate([R for _, R in riemann_slabs(imm)], axis=0)


@dataclass(frozen=True)
class CurvatureNullity:
    dim: np.ndarray
    singular_values: np.ndarray
    rtol: float
    atol: float
    contains_relative_nullity: np.ndarray


def nullity_of_curvature(imm, rank=None, rtol=RANK_RTOL, atol=None):
    """Per-node dimension of {X : R(X, Y)Z = 0}; checks Delta_f inside it when ``rank`` is given.

    The default absolute floor is the round-off level of three nested
    difference quotients of the metric.
    """
    if atol is None:
        atol = max(RANK_ATOL, 1e4 * np.finfo(float).eps * np.max(np.abs(imm.metric)) / min(imm.spacing) ** 3)
    sv = np.empty(imm.shape + (4,))
    dim = np.empty(imm.shape, dtype=int)
    contains = np.ones(imm.shape, dtype=bool)
    for rows, R in riemann_slabs(imm):
        M = np.moveaxis(R, -4, -1).reshape(R.shape[:-4] + (64, 4))
        sv[rows] = np.linalg.svd(M, compute_uv=False)
        thr = _threshold(sv[rows], rtol, atol)
        dim[rows] = np.sum(sv[rows] <= thr, axis=-1)
        if rank is not None:
            kern = rank.kernels[rows]
            for k in range(4):
                active = rank.nullity[rows] > k   # kernel rows are the last `nullity` rows
                v = kern[..., 3 - k, :]
                hit = np.linalg.norm(np.einsum("...ma,...a->...m", M, v), axis=-1) <= 10 * thr[..., 0]
                contains[rows] &= ~active | hit
    return CurvatureNullity(dim, sv, rtol, atol, contains)


def gauss_equation_residual(imm):
    """max over the interior of |R_abcd - Gauss-equation value| relative to max|R|."""
    if imm.second_fundamental is None:
        second_fundamental(imm)
    ng = imm.normal_gram
    mask = imm.mask(3)
    diff = size = 0.0
    for rows, R in riemann_slabs(imm):
        al, n = imm.second_fundamental[rows], ng[rows]
        # <R(X,Y)Z,W> = <alpha(Y,Z), alpha(X,W)> - <alpha(X,Z), alpha(Y,W)>
        gauss = (np.einsum("...bcr,...rs,...ads->...abcd", al, n, al)
                 - np.einsum("...acr,...rs,...bds->...abcd", al, n, al))
        m = mask[rows]
        if m.any():
            diff = max(diff, float(np.max(np.abs(R - gauss)[m])))
            size = max(size, float(np.max(np.abs(R[m]))))
    return diff, size
