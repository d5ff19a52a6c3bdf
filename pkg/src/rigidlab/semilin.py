"""Semi-Euclidean linear algebra: indefinite inner products, Gram signatures, frame factorization."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_SIGNATURE_TOL = 1e-8


class SignatureError(ValueError):
    pass


@dataclass(frozen=True)
class SemiEuclideanSpace:
    """R^N_nu: the last ``index`` coordinates carry the negative sign."""

    dim: int
    index: int = 0

    def __post_init__(self):
        if self.dim < 1 or not 0 <= self.index <= self.dim:
            raise SignatureError(f"invalid signature R^{self.dim}_{self.index}")

    @property
    def metric(self):
        return np.diag(self.signs)

    @property
    def signs(self):
        return np.r_[np.ones(self.dim - self.index), -np.ones(self.index)]

    def inner(self, u, v):
        """Inner product, broadcasting over leading axes."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.shape[-1] != self.dim or v.shape[-1] != self.dim:
            raise SignatureError(f"expected vectors of dimension {self.dim}")
        return np.sum(u * v * self.signs, axis=-1)

    def gram(self, vectors):
        """Gram matrix of vectors stacked along axis -2 (shape ... x k x N)."""
        vectors = np.asarray(vectors, dtype=float)
        return np.einsum("...ia,a,...ja->...ij", vectors, self.signs, vectors)


def inner_product(space, u, v):
    return float(space.inner(u, v))


@dataclass(frozen=True)
class GramReport:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    p: int
    q: int
    z: int
    tol: float

    @property
    def signature(self):
        return (self.p, self.q, self.z)


def gram_signature(G, tol=DEFAULT_SIGNATURE_TOL):
    """Eigen-signature (p, q, z) of a symmetric matrix.

    An eigenvalue counts as zero when ``|lam| <= tol * max|lam|``; if every
    eigenvalue is below ``tol`` in absolute terms they are all zero.
    """
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise SignatureError("Gram matrix must be square")
    scale = max(np.max(np.abs(G)), 1.0)
    if np.max(np.abs(G - G.T)) > tol * scale:
        raise SignatureError("Gram matrix is not symmetric within tolerance")
    lam = np.linalg.eigvalsh(0.5 * (G + G.T))
    big = np.max(np.abs(lam)) if lam.size else 0.0
    thresh = tol * big if big > tol else tol
    zero = np.abs(lam) <= thresh
    p = int(np.sum((lam > 0) & ~zero))
    q = int(np.sum((lam < 0) & ~zero))
    z = int(np.sum(zero))
    log.debug("gram_signature: eigenvalues %s, threshold %.3g -> (%d,%d,%d)", lam, thresh, p, q, z)
    return GramReport(G, lam, p, q, z, tol)


def _canonical_sign(v):
    nz = np.flatnonzero(np.abs(v) > 1e-14 * max(np.max(np.abs(v)), 1e-300))
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def gram_factor(G, tol=DEFAULT_SIGNATURE_TOL):
    """Factor a rank-2 symmetric 3x3 Gram matrix as <eta_i, eta_j> in R^2_nu.

    Returns ``(space, frame)`` with ``frame`` of shape (3, 2): row i is eta_i.
    Positive directions come first, matching :class:`SemiEuclideanSpace`.
    """
    rep = gram_signature(G, tol)
    if rep.z != 1 or rep.p + rep.q != 2:
        raise SignatureError(f"Gram matrix of signature {rep.signature} is not of rank 2 with a 1-dim kernel")
    lam, vec = np.linalg.eigh(0.5 * (np.asarray(G, float) + np.asarray(G, float).T))
    order = np.argsort(-lam)  # positive first, zero in the middle, negative last
    cols = []
    for idx in order:
        if abs(lam[idx]) <= rep.tol * np.max(np.abs(lam)):
            continue
        cols.append(_canonical_sign(vec[:, idx]) * np.sqrt(abs(lam[idx])))
    frame = np.column_stack(cols)
    return SemiEuclideanSpace(2, rep.q), frame


def null_space(M, rtol=1e-10):
    """Orthonormal basis (columns) for the kernel of M using a relative singular-value cut."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    _, s, vt = np.linalg.svd(M)
    big = s[0] if s.size else 0.0
    rank = int(np.sum(s > rtol * big)) if big > 0 else 0
    return vt[rank:].T.copy()


def orthogonal_complement(space, vectors, rtol=1e-10):
    """Basis of the ``space``-orthogonal complement of the rows of ``vectors``."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    return null_space(vectors * space.signs, rtol).T
