"""Conjugate nets: Darboux-Manakov-Zakharov integration, coefficient fitting, support functions.

A field F on the chart is a conjugate net for the coefficients (Gamma, g) when

    d_i d_j F = Gamma(i,j) d_j F + Gamma(j,i) d_i F - g_ij F        (i < j)

where Gamma(i,j) is the coefficient for which derivation direction i acts on
index j (the same convention used by the Sbrana connection: d_i phi_j =
2 Gamma(i,j) phi_j).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .numgrid import ChartGrid, Field, GridError, OVERFLOW_GUARD, BlowUpError, differentiate

log = logging.getLogger(__name__)

PAIRS = ((0, 1), (0, 2), (1, 2))
ORDERED = tuple((i, j) for i in range(3) for j in range(3) if i != j)


class InconsistentCauchyData(ValueError):
    pass


@dataclass(frozen=True)
class NetCoefficients:
    grid: ChartGrid
    Gamma: dict   # (i, j) -> array on grid, i != j
    gij: dict     # (i, j) -> array on grid, i < j

    def __post_init__(self):
        Gamma = {k: np.broadcast_to(np.asarray(v, float), self.grid.shape).copy() for k, v in self.Gamma.items()}
        gij = {k: np.broadcast_to(np.asarray(v, float), self.grid.shape).copy() for k, v in self.gij.items()}
        if set(Gamma) != set(ORDERED) or set(gij) != set(PAIRS):
            raise GridError("need Gamma(i,j) for all i != j and g_ij for i < j")
        for arr in list(Gamma.values()) + list(gij.values()):
            if not np.all(np.isfinite(arr)):
                raise GridError("non-finite net coefficient")
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "gij", gij)

    @classmethod
    def zeros(cls, grid):
        z = np.zeros(grid.shape)
        return cls(grid, {k: z for k in ORDERED}, {k: z for k in PAIRS})

    def g(self, i, j):
        return self.gij[(min(i, j), max(i, j))]

    def swapped(self):
        """Same data read with the opposite index convention (Gamma(i,j) <-> Gamma(j,i))."""
        return NetCoefficients(self.grid, {(i, j): self.Gamma[(j, i)] for (i, j) in ORDERED}, self.gij)


def with_index_order(coeffs, order="derivation-first"):
    if order == "derivation-first":
        return coeffs
    if order == "target-first":
        return coeffs.swapped()
    raise ValueError(f"unknown gamma_index_order {order!r}")


@dataclass(frozen=True)
class ConjugateNet:
    h: Field
    coeffs: NetCoefficients
    gamma: Field
    n: int = field(default=None)

    def __post_init__(self):
        if self.n is None:
            object.__setattr__(self, "n", self.h.k - 1)

    @property
    def grid(self):
        return self.h.grid

    def sphericality(self):
        """max | |h|^2 - 1 | over the grid."""
        return float(np.max(np.abs(np.sum(self.h.values ** 2, axis=-1) - 1.0)))


# -- Goursat sweeps -------------------------------------------------------------

def _goursat(F, a, b, c, hi, hj, bi, bj, guard=OVERFLOW_GUARD):
    """Fill F (ni, nj, m, k) in place from row ``bi`` and column ``bj``.

    Solves d_i d_j F = a d_j F + b d_i F - c F with the second-order box
    scheme (cell-centred derivatives and averaged coefficients), marching
    outward into the four quadrants.  a, b, c have shape (ni, nj, m).
    """
    ni, nj = F.shape[:2]
    for si in (1, -1):
        for sj in (1, -1):
            Hi, Hj = si * hi, sj * hj
            irange = range(bi, ni - 1) if si > 0 else range(bi, 0, -1)
            jrange = range(bj, nj - 1) if sj > 0 else range(bj, 0, -1)
            for i in irange:
                i1 = i + si
                for j in jrange:
                    j1 = j + sj
                    ac = 0.25 * (a[i, j] + a[i1, j] + a[i, j1] + a[i1, j1])[:, None]
                    bc = 0.25 * (b[i, j] + b[i1, j] + b[i, j1] + b[i1, j1])[:, None]
                    cc = 0.25 * (c[i, j] + c[i1, j] + c[i, j1] + c[i1, j1])[:, None]
                    f00, f10, f01 = F[i, j], F[i1, j], F[i, j1]
                    rhs = ((f10 + f01 - f00) / (Hi * Hj)
                           + ac * (f01 - f00 - f10) / (2 * Hj)
                           + bc * (f10 - f00 - f01) / (2 * Hi)
                           - cc * (f00 + f01 + f10) / 4)
                    lhs = 1.0 / (Hi * Hj) - ac / (2 * Hj) - bc / (2 * Hi) + cc / 4
                    val = rhs / lhs
                    if not np.all(np.isfinite(val)) or np.max(np.abs(val)) > guard:
                        raise BlowUpError(f"DMZ sweep blew up near node ({i1}, {j1})", node=(i1, j1))
                    F[i1, j1] = val


def _plane_view(arr, i, j, fixed_axis, fixed_index):
    """Rearrange a grid array to (n_i, n_j, 1, ...) for the plane through ``fixed_index``."""
    sl = [slice(None)] * 3
    sl[fixed_axis] = slice(fixed_index, fixed_index + 1)
    sub = arr[tuple(sl)]
    return np.moveaxis(sub, (i, j, fixed_axis), (0, 1, 2))


def dmz_integrate(coeffs, cauchy, k=None, tol=1e-10):
    """Integrate the conjugate-net system from Goursat data on the three axes through the base.

    ``cauchy`` is a sequence of three arrays; entry ``a`` holds the target
    field along coordinate axis ``a`` through the base point (shape
    ``(n_a, k)`` or ``(n_a,)``).  Only values enter the Goursat problem;
    derivatives along the axes follow from them.  The three planes through
    the base are filled first, then every (u0, u1) slice is swept with the
    (0, 1) equation.
    """
    grid = coeffs.grid
    b = grid.base_index
    data = [np.asarray(c, dtype=float) for c in cauchy]
    data = [d[:, None] if d.ndim == 1 else d for d in data]
    k = data[0].shape[1] if k is None else k
    for ax, d in enumerate(data):
        if d.shape != (grid.shape[ax], k):
            raise GridError(f"Cauchy data on axis {ax} has shape {d.shape}, expected {(grid.shape[ax], k)}")
    base_vals = [d[b[ax]] for ax, d in enumerate(data)]
    scale = max(1.0, max(np.max(np.abs(v)) for v in base_vals))
    for v in base_vals[1:]:
        if np.max(np.abs(v - base_vals[0])) > tol * scale:
            raise InconsistentCauchyData("Cauchy data disagree at the base point")

    F = np.full(grid.shape + (k,), np.nan)
    F[:, b[1], b[2]] = data[0]
    F[b[0], :, b[2]] = data[1]
    F[b[0], b[1], :] = data[2]
    h = grid.spacing

    for (i, j), fixed in zip(PAIRS, (2, 1, 0)):
        Fp = np.ascontiguousarray(_plane_view(F, i, j, fixed, b[fixed]))
        a = _plane_view(coeffs.Gamma[(i, j)], i, j, fixed, b[fixed])
        bb = _plane_view(coeffs.Gamma[(j, i)], i, j, fixed, b[fixed])
        c = _plane_view(coeffs.g(i, j), i, j, fixed, b[fixed])
        _goursat(Fp, a, bb, c, h[i], h[j], b[i], b[j])
        sl = [slice(None)] * 3
        sl[fixed] = slice(b[fixed], b[fixed] + 1)
        F[tuple(sl)] = np.moveaxis(Fp, (0, 1, 2), (i, j, fixed))

    _goursat(F, coeffs.Gamma[(0, 1)], coeffs.Gamma[(1, 0)], coeffs.g(0, 1), h[0], h[1], b[0], b[1])
    return Field(grid, F)


def solve_support(coeffs, cauchy, tol=1e-10):
    """Support function gamma with Q(gamma) = 0 (the g_ij term included)."""
    return dmz_integrate(coeffs, cauchy, k=1, tol=tol)


def _derivatives(values, grid, order=2):
    d = [differentiate(values, grid.spacing[a], a, order) for a in range(3)]
    dd = {(i, j): differentiate(d[i], grid.spacing[j], j, order) for i, j in PAIRS}
    return d, dd


def q_residual(F, coeffs, margin=2, stencil_order=4):
    """Pointwise max over pairs of |Q_ij(F)| and its maximum over the interior (``margin`` cells).

    The default fourth-order stencil keeps the measurement error well below
    the second-order error of the fields being measured.
    """
    vals = F.values if isinstance(F, Field) else np.asarray(F, dtype=float)
    grid = coeffs.grid
    if vals.shape[:3] != grid.shape:
        raise GridError("field and coefficients live on different grids")
    d, dd = _derivatives(vals, grid, stencil_order)
    res = np.zeros(grid.shape)
    for i, j in PAIRS:
        q = (dd[(i, j)] - coeffs.Gamma[(i, j)][..., None] * d[j]
             - coeffs.Gamma[(j, i)][..., None] * d[i] + coeffs.g(i, j)[..., None] * vals)
        res = np.maximum(res, np.linalg.norm(q, axis=-1))
    mask = grid.interior_mask(margin)
    return Field(grid, res), float(np.max(res[mask]))


@dataclass(frozen=True)
class FitReport:
    residual: np.ndarray      # grid-shaped, max over pairs of the least-squares residual norm
    degenerate: np.ndarray    # grid-shaped bool
    min_singular: np.ndarray  # grid-shaped, smallest relative singular value over pairs


def fit_coefficients(h, tol=1e-8, stencil_order=2):
    """Least-squares recovery of (Gamma(i,j), Gamma(j,i), g_ij) at every node from a sampled net."""
    if h.k < 4:
        raise GridError("fitting needs at least 4 components")
    grid = h.grid
    vals = h.values
    d, dd = _derivatives(vals, grid, stencil_order)
    Gamma, gij = {}, {}
    residual = np.zeros(grid.shape)
    degenerate = np.zeros(grid.shape, dtype=bool)
    min_sv = np.full(grid.shape, np.inf)
    for i, j in PAIRS:
        D = np.stack([d[j], d[i], -vals], axis=-1)          # (..., k, 3)
        u, s, vt = np.linalg.svd(D, full_matrices=False)
        rel = s[..., -1] / np.maximum(s[..., 0], 1e-300)
        bad = rel < tol
        s_inv = np.where(s > tol * s[..., :1], 1.0 / np.where(s > 0, s, 1.0), 0.0)
        coef = np.einsum("...ba,...b,...cb,...c->...a", vt, s_inv, u, dd[(i, j)])
        Gamma[(i, j)] = coef[..., 0]
        Gamma[(j, i)] = coef[..., 1]
        gij[(i, j)] = coef[..., 2]
        r = dd[(i, j)] - np.einsum("...ka,...a->...k", D, coef)
        residual = np.maximum(residual, np.linalg.norm(r, axis=-1))
        degenerate |= bad
        min_sv = np.minimum(min_sv, rel)
    if np.any(degenerate):
        log.warning("fit_coefficients: %d degenerate nodes", int(degenerate.sum()))
    return NetCoefficients(grid, Gamma, gij), FitReport(residual, degenerate, min_sv)


def axis_data(values, grid):
    """Extract Goursat data (values on the three axes through the base) from a full grid array."""
    b = grid.base_index
    vals = np.asarray(values, dtype=float)
    return [vals[:, b[1], b[2]], vals[b[0], :, b[2]], vals[b[0], b[1], :]]
