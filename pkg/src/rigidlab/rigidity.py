"""Pairs of honest deformations: shared components, isometric extensions, chains.

Two deformations g^phi, g^phi_hat have xi-norms <xi_i, xi_i> = 1/phi_hat_i - 1/phi_i.
Both sections sum to -1, so they agree in 0, 1 or all 3 components.  With no
shared component the pair is genuine; with exactly one shared component i
the difference phi_hat - phi lies in the parallel line L_i and the pair
extends isometrically through

    lambda = eta_i - sum_{j != i} Gamma(j,i) / <A X_j, X_j> X_j,    G(p, t) = g(p) + t lambda(p).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .deform import _lift
from .hypersurface import BOUNDARY_LAYER, second_fundamental
from .numgrid import differentiate
from .sbrana import (
    TRANSPORT_TOL, AdmissibilityError, TypeBoundError, check_type_bound, line_section_base, parallel_transport,
)

log = logging.getLogger(__name__)

SHARED_TOL = TRANSPORT_TOL
DEGENERACY_TOL = 1e-6


class PairError(ValueError):
    """Sections that cannot be compared (different grids or bundles)."""


class ChainError(RuntimeError):
    """No admissible chain: the bundle lacks two parallel lines or a section leaves O."""


# -- pairs ----------------------------------------------------------------------

@dataclass(frozen=True)
class PairReport:
    xi_norms: np.ndarray       # (3,) at the base point
    shared: tuple
    verdict: str               # "genuine", "extends_via(i)" or "identical"
    via: int = None
    xi: np.ndarray = field(default=None, repr=False)   # xi = phi_hat_{i+1} - phi_{i+1} when |shared| = 1
    line_residual: float = None                        # distance of phi_hat - phi from L_via
    max_difference: np.ndarray = None                  # (3,) max |phi_hat_i - phi_i| over the region

    @property
    def extends(self):
        return self.via is not None


def _values(phi):
    return np.asarray(getattr(phi, "phi", phi), dtype=float)


def _base(phi, base=None):
    if hasattr(phi, "base_value"):
        return np.asarray(phi.base_value, dtype=float)
    v = _values(phi)
    if v.ndim == 1:
        return v
    base = tuple(n // 2 for n in v.shape[:3]) if base is None else base
    return v[base]


def pair_compare(phi, phi_hat, tol=SHARED_TOL, base=None):
    """Compare two sections (base values or fields, DeformationSection accepted)."""
    a, b = _values(phi), _values(phi_hat)
    if a.shape != b.shape or a.shape[-1] != 3:
        raise PairError(f"sections of shapes {a.shape} and {b.shape} live on different grids")
    pa, pb = _base(phi, base), _base(phi_hat, base)
    if np.min(np.abs(pa)) == 0 or np.min(np.abs(pb)) == 0:
        raise AdmissibilityError("a section has a vanishing component at the base point")
    norms = 1.0 / pb - 1.0 / pa
    diff = (b - a).reshape(-1, 3)
    maxdiff = np.max(np.abs(diff), axis=0)
    shared = tuple(int(i) for i in np.flatnonzero(maxdiff <= tol))
    if len(shared) == 2:
        # both sums are -1, so the third component agrees up to twice the tolerance
        log.warning("two shared components within tolerance; treating the pair as identical")
        shared = (0, 1, 2)
    if not shared:
        return PairReport(norms, (), "genuine", max_difference=maxdiff)
    if len(shared) == 3:
        return PairReport(norms, shared, "identical", max_difference=maxdiff)
    i = shared[0]
    j, k = (i + 1) % 3, (i + 2) % 3
    xi = (b - a)[..., j]
    # phi_hat - phi = (0, xi, -xi) up to relabeling
    resid = float(np.max(np.abs((b - a)[..., i]) + np.abs((b - a)[..., j] + (b - a)[..., k])))
    return PairReport(norms, shared, f"extends_via({i})", i, xi, resid, maxdiff)


# -- chains ---------------------------------------------------------------------

@dataclass(frozen=True)
class ChainReport:
    base_values: list          # [phi, intermediates..., phi_hat] at the base point
    sections: list             # the same, as transported fields (None when built from base values only)
    shared: list               # shared index sets of adjacent pairs
    branch: str                # "direct", "first", "second", "degenerate" or "identical"
    admissible: bool
    violations: dict           # position in chain -> (nodes with a vanishing component)

    @property
    def intermediates(self):
        return self.base_values[1:-1]


def chain_construct(phi, phi_hat, bundle=None, index_set=(0, 1), tol=SHARED_TOL, admissible_tol=1e-8):
    """Intermediate sections linking phi to phi_hat through single-index extensions.

    ``phi``, ``phi_hat`` are base values or DeformationSections.  Two parallel
    lines from ``index_set`` are relabeled as L_0, L_1.  With a bundle every
    intermediate is transported over the grid and its admissibility checked
    on the whole region.
    """
    if len(set(index_set)) < 2:
        raise ChainError(f"chains need two parallel lines; I = {tuple(index_set)}")
    a, b = sorted(set(index_set))[:2]
    order = [a, b] + [c for c in range(3) if c not in (a, b)]
    back = np.argsort(order)
    p, q = _base(phi), _base(phi_hat)
    for v in (p, q):
        if abs(v.sum() + 1) > 1e-8 or np.min(np.abs(v)) == 0:
            raise AdmissibilityError(f"{v} is not in O")
    if np.max(np.abs(p - q)) <= tol:
        return ChainReport([p, q], [], [(0, 1, 2)], "identical", True, {})
    if pair_compare(p, q, tol).extends:
        steps, branch = [], "direct"
    else:
        pn = p[order]
        l0, l1 = line_section_base(0), line_section_base(1)
        # phi - phi_hat = a l_0 - b l_1 in the relabeled components
        d = pn - q[order]
        b_, a_ = d[0], d[1]
        first, second = pn + b_ * l1, pn - a_ * l0
        if np.min(np.abs(first)) > admissible_tol:
            steps, branch = [first], "first"
        elif np.min(np.abs(second)) > admissible_tol:
            steps, branch = [second], "second"
        else:
            c = pn[2]
            one = pn + 0.5 * c * l0
            steps, branch = [one, one - c * l1], "degenerate"
        steps = [v[back] for v in steps]
    values = [p] + steps + [q]
    shared = [pair_compare(x, y, tol).shared for x, y in zip(values[:-1], values[1:])]
    if any(len(s) != 1 for s in shared):
        raise ChainError(f"chain step does not share exactly one component: {shared}")
    sections, violations = [], {}
    if bundle is not None:
        for k, v in enumerate(values):
            if k == 0 and hasattr(phi, "phi"):
                sections.append(phi.phi)
                continue
            if k == len(values) - 1 and hasattr(phi_hat, "phi"):
                sections.append(phi_hat.phi)
                continue
            sections.append(parallel_transport(bundle, v, check_paths=False).values)
        for k, s in enumerate(sections):
            bad = np.argwhere(np.min(np.abs(s), axis=-1) <= admissible_tol)
            if len(bad):
                violations[k] = [tuple(int(x) for x in n) for n in bad]
                log.warning("chain section %d leaves O at %d nodes", k, len(bad))
    return ChainReport(values, sections, shared, branch, not violations, violations)


def quotient_dimension(t, index_set):
    """Dimension t - min(|I|, 2) of the space of deformations up to chains of extensions."""
    try:
        check_type_bound(t, index_set)
    except TypeBoundError as exc:
        raise TypeBoundError(f"{exc}; the type or the index set was misdetected upstream") from exc
    return t - min(len(index_set), 2)


# -- the extension direction lambda ----------------------------------------------

class ExtensionError(RuntimeError):
    """The extension cannot be built (vanishing principal values, no immersive t-range)."""


@dataclass
class LambdaSection:
    """lambda = eta_i + Y on f's whole parameter box (grid + (ns, N))."""

    index: int
    vectors: np.ndarray            # ambient lambda, grid + (ns, N)
    eta: np.ndarray                # ambient eta_i, grid + (ns, N)
    tangent_coeffs: np.ndarray     # Y in the coordinate frame (d_0, d_1, d_2, d_s), grid + (ns, 4)
    eta_derivative_residual: float  # max |normal part of d_i eta_i - (d_i(1/phi_i)/2 phi_i + Gamma_i) eta_i|
    laplace_residual: float        # max |Gamma(i,j) - Gamma(i,k)|
    flagged: np.ndarray            # chart nodes where some <A X_j, X_j> is tiny


def _normal_part(tangents, space, v):
    """Remove from v (... x N) its projection on the span of tangents (... x 4 x N)."""
    G = space.gram(tangents)
    rhs = np.einsum("...ka,a,...a->...k", tangents, space.signs, v)
    coef = np.linalg.solve(G, rhs[..., None])[..., 0]
    return v - np.einsum("...k,...ka->...a", coef, tangents)


def lambda_section(f, build, section, coeffs, index=0, mask=None, lam_tol=1e-10):
    """The line field Lambda = span(lambda) of a deformation g sharing component ``index``.

    ``build`` is the DeformationBuild of g over ``f`` and ``section`` its
    DeformationSection.  Gamma(j, i) / <A X_j, X_j> only involves f, so the
    tangent part Y is the same for every deformation sharing the index.
    """
    i = int(index)
    others = [j for j in range(3) if j != i]
    g = build.immersion
    grid = coeffs.grid
    mask = grid.interior_mask(BOUNDARY_LAYER) if mask is None else mask
    if f.second_fundamental is None:
        second_fundamental(f)
    ns, k = len(f.s), f.s_index
    lam = np.stack([f.second_fundamental[..., a, a, 0] for a in range(3)], axis=-1)   # grid + (ns, 3)
    flagged = np.min(np.abs(lam[..., k, others]), axis=-1) <= lam_tol * float(np.max(np.abs(lam)))
    if flagged[mask].any():
        raise ExtensionError(f"<A X_j, X_j> vanishes on {int(flagged[mask].sum())} nodes")
    c = _lift(f)                                                                      # grid + (ns, 3)
    eta0 = build.frame_values[..., 4 + i, :]
    eta = np.broadcast_to(eta0[:, :, :, None, :], grid.shape + (ns, eta0.shape[-1])).copy()
    Y = np.zeros(grid.shape + (ns, 4))
    for j in others:
        y = -coeffs.Gamma[(j, i)][..., None] / lam[..., j]
        Y[..., j] += y
        Y[..., 3] += y * c[..., j]
    vectors = eta + np.einsum("...a,...ak->...k", Y, g.tangent_frame)
    laplace = float(np.max(np.abs(coeffs.Gamma[(i, others[0])] - coeffs.Gamma[(i, others[1])])[mask]))
    # derivative equation of eta_i, with d_i phi_i = -2 sum_j Gamma(i, j) phi_j from the Sbrana equations
    phi = section.phi
    dphi = -2 * sum(coeffs.Gamma[(i, j)] * phi[..., j] for j in others)
    coef = -dphi / (2 * phi[..., i]) + coeffs.Gamma[(i, others[0])]
    deta = differentiate(eta0, grid.spacing[i], i, g.stencil_order)
    normal = _normal_part(g.tangent_frame[:, :, :, k], g.target, deta)
    deriv = float(np.max(np.abs(normal - coef[..., None] * eta0)[mask]))
    return LambdaSection(i, vectors, eta, Y, deriv, laplace, flagged)


# -- the extension G(p, t) = g(p) + t lambda(p) ----------------------------------------

@dataclass
class ExtensionBundle:
    """One side of an extension, sampled on the chart slice s = 0 times t samples."""

    index: int
    literal: bool                  # direction eta_i alone instead of lambda
    lam: LambdaSection
    t: np.ndarray
    positions: np.ndarray          # grid + (nt, N)
    frame: np.ndarray              # grid + (nt, 5, N): d_0, d_1, d_2, d_s, d_t
    T: np.ndarray                  # grid + (nt, 5, 5)
    schur: np.ndarray              # grid, T_tt - T_tM T_MM^-1 T_Mt at t = 0
    normal_form: np.ndarray        # grid + (4,), a(d_a) with N_g(d_a) = a(d_a) eta_i
    normal_form_residual: float    # max |N_g(d_a) - a(d_a) eta_i| over the mask
    jacobian_ratio: float          # min singular value ratio of the frame over the mask
    shrinks: int
    induced_metric: np.ndarray = field(repr=False, default=None)   # g's metric on the slice
    mask: np.ndarray = field(repr=False, default=None)

    @property
    def t_range(self):
        return float(self.t[0]), float(self.t[-1])

    @property
    def t_resolution(self):
        return len(self.t)

    def signature_class(self, tol=DEGENERACY_TOL):
        """Per node: 1 Riemannian, -1 Lorentzian, 0 degenerate (from the t = 0 Schur complement)."""
        return np.where(self.schur > tol, 1, np.where(self.schur < -tol, -1, 0))


def build_extension(f, g_build, lam, t_range=(-0.05, 0.05), t_resolution=3, literal=False,
                    mask=None, rank_tol=1e-3, max_shrinks=20):
    """Sample G(p, t) = g(p) + t D(p), D = lambda (or eta_i with ``literal``), and its metric T."""
    g = g_build.immersion
    grid = g.grid
    mask = grid.interior_mask(BOUNDARY_LAYER) if mask is None else mask
    k = g.s_index
    D = lam.eta if literal else lam.vectors
    D0 = D[:, :, :, k]
    dD = np.stack([g.d(D, a)[:, :, :, k] for a in range(4)], axis=-2)       # grid + (4, N)
    tang = g.tangent_frame[:, :, :, k]
    if t_resolution < 3 or t_resolution % 2 == 0:
        raise ValueError("t_resolution must be odd and at least 3 so that t = 0 is sampled")
    lo, hi = t_range
    for shrinks in range(max_shrinks + 1):
        t = np.linspace(lo, hi, t_resolution)
        t[t_resolution // 2] = 0.0
        frame = np.empty(grid.shape + (t_resolution, 5, D0.shape[-1]))
        frame[..., :4, :] = tang[:, :, :, None] + t[:, None, None] * dD[:, :, :, None]
        frame[..., 4, :] = D0[:, :, :, None, :]
        sv = np.linalg.svd(frame[mask], compute_uv=False)
        ratio = float(np.min(sv[..., -1] / sv[..., 0]))
        if ratio > rank_tol:
            break
        lo, hi = lo / 2, hi / 2
    else:
        raise ExtensionError(f"G is not an immersion on any t-range down to {hi:.2e}")
    if shrinks:
        log.info("t-range shrunk %d times to (%.3g, %.3g)", shrinks, lo, hi)
    positions = g.positions[:, :, :, k, None, :] + t[:, None] * D0[:, :, :, None, :]
    T = g.target.gram(frame)
    T0 = T[..., t_resolution // 2, :, :]
    w = np.linalg.solve(T0[..., :4, :4], T0[..., :4, 4:5])[..., 0]
    schur = T0[..., 4, 4] - np.einsum("...a,...a->...", T0[..., 4, :4], w)
    # N_g(d_a): normal part of d_a D along t = 0, expected to be a multiple of eta_i
    eta = lam.eta[:, :, :, k]
    normal = _normal_part(tang[..., None, :, :], g.target, dD)              # grid + (4, N)
    a = np.einsum("...k,...ak->...a", eta, normal) / np.sum(eta * eta, axis=-1)[..., None]
    resid = float(np.max(np.abs(normal - a[..., None] * eta[..., None, :])[mask]))
    return ExtensionBundle(lam.index, literal, lam, t, positions, frame, T, schur, a, resid,
                           ratio, shrinks, g.metric[:, :, :, k], mask)


@dataclass(frozen=True)
class ExtensionComparison:
    deviation: float               # max |T_G - T_G~| over the mask and all t
    t0_metric_error: float         # max |T(t=0) restricted to M - induced metric of g|
    signature: np.ndarray          # per node class from the Schur complement (1, -1, 0)
    histogram: dict
    degenerate_nodes: list         # chart nodes (in the mask) classified degenerate
    phi_degenerate_nodes: list     # chart nodes (in the mask) with |phi_i + 1| <= tol
    degenerate_match: bool
    normal_form_difference: float  # max |a - a_hat|
    normal_form_residual: float    # max of both N_g residuals
    literal_deviation: float = None

    @property
    def degenerate_set(self):
        return set(self.degenerate_nodes)


def extension_metric_compare(ext, ext_hat, phi_i, mask=None, degeneracy_tol=DEGENERACY_TOL, literal=None):
    """Compare the metrics induced by G and G~ and locate where T degenerates.

    ``phi_i`` is the shared component as a chart field; ``literal`` may hold
    the pair of eta-only extensions, whose deviation is reported alongside.
    """
    if ext.T.shape != ext_hat.T.shape or not np.allclose(ext.t, ext_hat.t):
        raise ValueError("extensions are sampled on different (grid x t) domains")
    if ext.index != ext_hat.index:
        raise ValueError("the extensions use different shared indices")
    mask = ext.mask if mask is None else mask
    dev = float(np.max(np.abs(ext.T - ext_hat.T)[mask]))
    mid = len(ext.t) // 2
    t0_err = float(np.max(np.abs(ext.T[..., mid, :4, :4] - ext.induced_metric)[mask]))
    sig = ext.signature_class(degeneracy_tol)
    nodes = lambda m: [tuple(int(x) for x in n) for n in np.argwhere(m & mask)]
    deg = nodes(sig == 0)
    phideg = nodes(np.abs(np.asarray(phi_i) + 1) <= degeneracy_tol)
    classes = (("riemannian", 1), ("lorentzian", -1), ("degenerate", 0))
    hist = {name: int(np.sum((sig == v) & mask)) for name, v in classes}
    nf = float(np.max(np.abs(ext.normal_form - ext_hat.normal_form)[mask]))
    nres = max(ext.normal_form_residual, ext_hat.normal_form_residual)
    lit = None
    if literal is not None:
        lit = float(np.max(np.abs(literal[0].T - literal[1].T)[mask]))
    return ExtensionComparison(dev, t0_err, sig, hist, deg, phideg, set(deg) == set(phideg), nf, nres, lit)
