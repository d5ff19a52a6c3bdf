"""The Sbrana bundle: connection, transport, curvature, flat subbundle, line tests, deformation space.

A section phi = (phi0, phi1, phi2) is parallel when

    d_i phi_j = 2 Gamma(i,j) phi_j          (i != j)
    d_i phi_i = -sum_{j != i} 2 Gamma(i,j) phi_j

i.e. d_i phi = A_i phi with the axis matrices built in ``axis_matrices``.
Every column of A_i sums to zero, so sum(phi) is conserved along any path.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .conjnet import PAIRS, NetCoefficients
from .numgrid import differentiate, line_integrate
from .semilin import SignatureError, gram_signature

log = logging.getLogger(__name__)

TRANSPORT_TOL = 1e-7
FLAT_TOL = 1e-6
LINE_TOL = 1e-6
ORACLE_TOL = 1e-6
DEFAULT_ORDER = (0, 1, 2)


class PathDependenceError(RuntimeError):
    """Raised when a section asserted to be parallel depends on the transport path."""


class TypeBoundError(RuntimeError):
    """min(2, |I|) <= t <= 2 fails on an analyzed bundle."""


class AdmissibilityError(ValueError):
    """A base value outside O: sum != -1 or a vanishing component."""


def axis_matrices(coeffs):
    """The three connection matrix fields A_i (grid + (3, 3))."""
    grid = coeffs.grid
    A = [np.zeros(grid.shape + (3, 3)) for _ in range(3)]
    for i in range(3):
        for j in range(3):
            if j == i:
                continue
            A[i][..., j, j] = 2 * coeffs.Gamma[(i, j)]
            A[i][..., i, j] = -2 * coeffs.Gamma[(i, j)]
    return A


@dataclass
class SbranaBundle:
    coeffs: NetCoefficients
    connection: list = field(default=None, repr=False)
    stencil_order: int = 4
    _curvature: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.connection is None:
            self.connection = axis_matrices(self.coeffs)

    @property
    def grid(self):
        return self.coeffs.grid

    @property
    def curvature(self):
        if self._curvature is None:
            self._curvature = curvature_field(self)
        return self._curvature


# -- transport ------------------------------------------------------------------

def _transport(A, y0, base, spacing, order):
    """Path-ordered transport of y0 (shape (3,) or (3, m)) from ``base`` over the grid."""
    y0 = np.asarray(y0, dtype=float)
    vec = y0.ndim == 1
    if vec:
        y0 = y0[:, None]
    shape = A[0].shape[:3]
    Y = np.full(shape + y0.shape, np.nan)
    # state on the sub-box spanned by the axes visited so far; other axes at base
    cur = y0
    visited = []
    for ax in order:
        sl = [slice(None) if a in visited else base[a] for a in range(3)]
        sl[ax] = slice(None)
        Aline = A[ax][tuple(sl)]
        # Aline keeps the visited axes plus ax, in increasing axis order
        kept = sorted(visited + [ax])
        pos = kept.index(ax)
        cur = line_integrate(Aline, cur, pos, base[ax], spacing[ax])
        visited = kept
    Y[...] = cur
    return Y[..., 0] if vec else Y


@dataclass(frozen=True)
class Transport:
    values: np.ndarray          # grid + (3,) or grid + (3, m)
    order: tuple
    path_dependence: float      # max over other axis orders of |difference| (interior)
    sum_drift: float            # max |sum(phi) - sum(phi0)| over the grid


def parallel_transport(bundle, phi0, order=DEFAULT_ORDER, check_paths=True, assert_flat=False,
                       tol=TRANSPORT_TOL, margin=0):
    """Transport ``phi0`` from the base point along coordinate lines in ``order``.

    The path-dependence residual compares against every other axis order.
    With ``assert_flat`` a residual above ``tol`` raises PathDependenceError.
    """
    grid = bundle.grid
    phi0 = np.asarray(phi0, dtype=float)
    Y = _transport(bundle.connection, phi0, grid.base_index, grid.spacing, tuple(order))
    dep = 0.0
    mask = grid.interior_mask(margin) if margin else np.ones(grid.shape, dtype=bool)
    if check_paths:
        for other in itertools.permutations(range(3)):
            if other == tuple(order):
                continue
            Z = _transport(bundle.connection, phi0, grid.base_index, grid.spacing, other)
            dep = max(dep, float(np.max(np.abs(Z - Y)[mask])))
    s0 = phi0.sum(axis=0)
    drift = float(np.max(np.abs(Y.sum(axis=3) - s0)))
    if assert_flat and dep > tol:
        raise PathDependenceError(f"transport depends on the path: {dep:.3e} > {tol:.1e}")
    return Transport(Y, tuple(order), dep, drift)


# -- curvature ------------------------------------------------------------------

def curvature_field(bundle):
    """F_ij = d_i A_j - d_j A_i + [A_j, A_i] for i < j (the integrability condition of d phi = A phi)."""
    A = bundle.connection
    h = bundle.grid.spacing
    o = bundle.stencil_order
    F = {}
    for i, j in PAIRS:
        F[(i, j)] = (differentiate(A[j], h[i], i, o) - differentiate(A[i], h[j], j, o)
                     + A[j] @ A[i] - A[i] @ A[j])
    return F


def curvature_scale(bundle, mask=None):
    """RMS over nodes and pairs of the size the curvature could have without cancellation."""
    A = bundle.connection
    h = bundle.grid.spacing
    mask = np.ones(bundle.grid.shape, dtype=bool) if mask is None else mask
    total, count = 0.0, 0
    for i, j in PAIRS:
        m = (np.abs(differentiate(A[j], h[i], i)) + np.abs(differentiate(A[i], h[j], j))
             + 2 * np.abs(A[i]) @ np.abs(A[j]))[mask]
        total += float(np.sum(m ** 2))
        count += m.shape[0]
    return np.sqrt(total / max(count, 1))


# -- flat subbundle -------------------------------------------------------------

@dataclass(frozen=True)
class FlatSubbundle:
    base_basis: np.ndarray      # (3, r) values at the base point (orthonormal)
    basis: np.ndarray           # grid + (3, r) transported sections
    rank: int
    type_t: int                 # rank - 1 (-1 when rank = 0)
    admits_phi: bool            # some element has nonzero sum, so O can be nonempty
    singular_values: np.ndarray # relative, ascending
    rank_interval: tuple        # (lowest, highest) plausible rank; equal unless ambiguous
    oracle_rank: int
    oracle_singular_values: np.ndarray
    parallel_residual: float
    tol: float


def _kernel_rank(rel, tol, ambiguity):
    """Fail-closed kernel count from ascending relative singular values."""
    sure = int(np.sum(rel <= tol / ambiguity))
    loose = int(np.sum(rel <= tol * ambiguity))
    return sure, loose


def flat_subbundle(bundle, tol=FLAT_TOL, margin=2, ambiguity=10.0, oracle_tol=None):
    """Maximal parallel flat subbundle, as a subspace of the fiber at the base point.

    A base vector v spans a parallel section iff F_ij(x) P(x) v = 0 at every
    node, with P(x) the transport matrix from the base along the default
    path.  The stacked system is reduced by SVD; singular values within a
    factor ``ambiguity`` of ``tol`` make the rank ambiguous and it is then
    reported as the lower value.  The oracle stacks P_sigma(x) - P(x) over all
    axis orders sigma and counts its kernel separately.
    """
    grid = bundle.grid
    mask = grid.interior_mask(margin)
    eye = np.eye(3)
    P = _transport(bundle.connection, eye, grid.base_index, grid.spacing, DEFAULT_ORDER)
    F = bundle.curvature
    blocks = [(F[k] @ P)[mask] for k in PAIRS]
    rows = np.concatenate([b.reshape(-1, 3) for b in blocks], axis=0)
    _, sv, vt = np.linalg.svd(rows, full_matrices=False)
    nblocks = sum(b.shape[0] for b in blocks)
    scale = max(curvature_scale(bundle, mask), 1e-300) * np.sqrt(nblocks)
    rel = (sv / scale)[::-1]
    basis_vt = vt[::-1]
    lo, hi = _kernel_rank(rel, tol, ambiguity)
    if lo != hi:
        log.warning("flat subbundle rank ambiguous in [%d, %d]; reporting %d", lo, hi, lo)
    rank = lo
    B = basis_vt[:rank].T if rank else np.zeros((3, 0))
    sections = np.einsum("...ab,br->...ar", P, B)

    diffs = []
    for other in itertools.permutations(range(3)):
        if other == DEFAULT_ORDER:
            continue
        Q = _transport(bundle.connection, eye, grid.base_index, grid.spacing, other)
        diffs.append((Q - P)[mask].reshape(-1, 3))
    D = np.concatenate(diffs, axis=0)
    # RMS size of the order dependence along each singular direction
    osv = np.linalg.svd(D, compute_uv=False)[::-1] / np.sqrt(D.shape[0] / 3)
    otol = ORACLE_TOL if oracle_tol is None else oracle_tol
    oracle_rank = int(np.sum(osv <= otol))

    admits = bool(rank and np.max(np.abs(B.sum(axis=0))) > 1e-8)
    if rank:
        res = max(float(np.max(np.abs(F[k] @ sections)[mask])) for k in PAIRS)
    else:
        res = 0.0
    return FlatSubbundle(B, sections, rank, rank - 1, admits, rel, (lo, hi), oracle_rank, osv, res, tol)


# -- coordinate lines L_i --------------------------------------------------------

@dataclass(frozen=True)
class LineReport:
    index_set: tuple               # I, indices whose line passes both tests and transport agrees
    laplace: dict                  # i -> max |Gamma(i,i+1) - Gamma(i,i+2)|
    mixed: dict                    # i -> max |d_{i+1} Gamma(i+2,i+1) - d_{i+2} Gamma(i+1,i+2)|
    auxiliary: dict                # i -> max of the two remaining integrability residuals
    algebraic: dict                # i -> bool, both displayed conditions within tol
    transport_leak: dict           # i -> max |phi_i| + |phi_{i+1} + phi_{i+2}| after transport
    transport_path: dict           # i -> path dependence of the transported line section
    transported: dict              # i -> bool, transport stays in L_i and is path independent
    inconclusive: tuple
    tol: float
    transport_tol: float


def line_section_base(i):
    """Normalized base value of the line L_i: e_{i+1} - e_{i+2}."""
    v = np.zeros(3)
    v[(i + 1) % 3], v[(i + 2) % 3] = 1.0, -1.0
    return v


def line_parallel_tests(bundle, tol=LINE_TOL, transport_tol=TRANSPORT_TOL, margin=2):
    """Index set I with per-condition residuals, cross-validated by transport.

    Residuals are relative to the size of the coefficients (or their
    derivatives) so one tolerance fits all fields.
    """
    c = bundle.coeffs
    grid = bundle.grid
    h = grid.spacing
    o = bundle.stencil_order
    mask = grid.interior_mask(margin)
    G = c.Gamma
    gscale = max(max(float(np.max(np.abs(v))) for v in G.values()), 1e-300)
    dG = {(a, k): differentiate(G[k], h[a], a, o) for a in range(3) for k in G}
    # derivatives of near-constant coefficients are pure round-off: floor the scale at gscale / box size
    extent = max(n * d for n, d in zip(grid.shape, h))
    dscale = max(max(float(np.max(np.abs(v[mask]))) for v in dG.values()), gscale / extent)
    lap, mixed, aux, alg, leak, path, trans = {}, {}, {}, {}, {}, {}, {}
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        lap[i] = float(np.max(np.abs(G[(i, j)] - G[(i, k)])[mask])) / gscale
        mixed[i] = float(np.max(np.abs(dG[(j, (k, j))] - dG[(k, (j, k))])[mask])) / dscale
        # the line value xi obeys d_i xi = 2 Gamma(i,j) xi, d_j xi = 2 Gamma(j,k) xi, d_k xi = 2 Gamma(k,j) xi
        a1 = np.abs(dG[(j, (i, j))] - dG[(i, (j, k))])[mask]
        a2 = np.abs(dG[(k, (i, j))] - dG[(i, (k, j))])[mask]
        aux[i] = float(max(np.max(a1), np.max(a2))) / dscale
        alg[i] = lap[i] <= tol and mixed[i] <= tol
        tr = parallel_transport(bundle, line_section_base(i), margin=margin)
        Y = tr.values
        leak[i] = float(np.max((np.abs(Y[..., i]) + np.abs(Y[..., j] + Y[..., k]))[mask]))
        path[i] = tr.path_dependence
        trans[i] = leak[i] <= transport_tol and path[i] <= transport_tol
    index_set = tuple(i for i in range(3) if alg[i] and trans[i])
    inconclusive = tuple(i for i in range(3) if alg[i] != trans[i])
    for i in inconclusive:
        log.warning("line L_%d: algebraic test %s but transport %s (auxiliary residual %.2e)",
                    i, alg[i], trans[i], aux[i])
    return LineReport(index_set, lap, mixed, aux, alg, leak, path, trans, inconclusive, tol, transport_tol)


# -- deformation sections and the space O ---------------------------------------

@dataclass(frozen=True)
class DeformationSection:
    """A section phi with sum -1 and its derived data."""

    phi: np.ndarray            # grid + (3,)
    base_value: np.ndarray
    ambient_index: int
    path_dependence: float
    sum_drift: float
    min_abs_component: float

    @property
    def admissible(self):
        return self.min_abs_component > 0


def check_admissible(y, tol=1e-12):
    y = np.asarray(y, dtype=float)
    if y.shape != (3,):
        raise AdmissibilityError("a base value has three components")
    if abs(y.sum() + 1) > tol:
        raise AdmissibilityError(f"components sum to {y.sum():.15g}, not -1")
    if np.min(np.abs(y)) == 0:
        raise AdmissibilityError(f"component {int(np.argmin(np.abs(y)))} vanishes")
    return y


def ambient_index(y, tol=1e-8):
    """nu: number of negative eigenvalues of G = 1 + diag(1/y)."""
    G = np.ones((3, 3)) + np.diag(1.0 / np.asarray(y, dtype=float))
    rep = gram_signature(G, tol)
    if rep.z != 1:
        raise SignatureError(f"Gram of {y} has {rep.z} zero eigenvalues")
    return rep.q


def deformation_section(bundle, phi0, assert_flat=False, tol=TRANSPORT_TOL, margin=2):
    """Transport an admissible base value; reports path dependence and sum drift."""
    phi0 = check_admissible(phi0)
    tr = parallel_transport(bundle, phi0, assert_flat=assert_flat, tol=tol, margin=margin)
    return DeformationSection(tr.values, phi0, ambient_index(phi0), tr.path_dependence, tr.sum_drift,
                              float(np.min(np.abs(tr.values))))


@dataclass(frozen=True)
class DeformationSpace:
    """O = {y in F_base : sum(y) = -1, y_i != 0} as origin + span(directions) minus hyperplanes."""

    origin: np.ndarray           # (3,)
    directions: np.ndarray       # (3, t)
    excluded: tuple              # ((a, c), ...) meaning a . theta + c = 0 is removed, one per component
    dim: int
    empty: bool
    reason: str = ""

    def point(self, theta):
        return self.origin + self.directions @ np.asarray(theta, dtype=float)


def deformation_space(flat):
    """Affine description of O from the flat subbundle fiber at the base."""
    B = flat.base_basis
    r = B.shape[1]
    if r == 0:
        return DeformationSpace(np.full(3, np.nan), np.zeros((3, 0)), (), -1, True, "flat subbundle is trivial")
    s = B.sum(axis=0)                   # sum of each basis vector
    if np.max(np.abs(s)) <= 1e-8:
        return DeformationSpace(np.full(3, np.nan), np.zeros((3, 0)), (), -1, True,
                                "no flat section has nonzero sum")
    c0 = -s / (s @ s)
    origin = B @ c0
    _, _, vt = np.linalg.svd(s[None, :])
    D = B @ vt[1:].T                     # (3, r - 1)
    excluded = []
    for i in range(3):
        a, c = D[i], origin[i]
        if np.max(np.abs(a), initial=0.0) <= 1e-12 and abs(c) <= 1e-12:
            return DeformationSpace(origin, D, (), r - 1, True, f"component {i} vanishes on all of F")
        excluded.append((a, c))
    return DeformationSpace(origin, D, tuple(excluded), r - 1, False)


def check_type_bound(t, index_set):
    """min(2, |I|) <= t <= 2; raise when violated."""
    lo = min(2, len(index_set))
    if not lo <= t <= 2:
        raise TypeBoundError(f"type bound violated: t = {t}, |I| = {len(index_set)}")
    return True
