"""Synthetic coefficient fields with known structure, used by tests and manifests.

Compatible net coefficients come from a potential: every multiple
rho * (a0(u0) + a1(u1) + a2(u2)) of a separable field solves the net system
with

    Gamma(i, j) = d_i log rho,    g_ij = 2 rho_i rho_j / rho^2 - rho_ij / rho.

Sbrana-side fields (only Gamma enters the Sbrana connection) are built from a
seed section phi with sum -1: Gamma(i, j) = 1/2 d_i log|phi_j| for j != i makes
phi parallel, the diagonal equations holding because sum(phi) is constant.
Writing phi_1 / phi_2 = m1(u1) m2(u2) additionally makes the line L_0
parallel, and phi_2 / phi_0 = n0(u0) n2(u2) on top of that makes L_1 parallel
(see ``seeded_section``).  The g_ij of these fields are set to zero; they are
inputs for the bundle analysis only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conjnet import ORDERED, PAIRS, NetCoefficients
from .families import SeparableSphereNet, lorentz_family


@dataclass(frozen=True)
class TrigSum:
    """Smooth scalar c + sum_k a_k sin(w_k . u + p_k) with analytic derivatives."""

    const: float
    amps: np.ndarray      # (m,)
    freqs: np.ndarray     # (m, 3)
    phases: np.ndarray    # (m,)

    @classmethod
    def random(cls, rng, const=1.0, terms=3, amp=0.2, freq=1.0, axes=(0, 1, 2)):
        """Random draw; frequencies along axes outside ``axes`` are zero."""
        w = rng.uniform(-freq, freq, (terms, 3))
        w[:, [a for a in range(3) if a not in axes]] = 0.0
        return cls(const, rng.uniform(-amp, amp, terms), w, rng.uniform(0, 2 * np.pi, terms))

    def _arg(self, u):
        return np.einsum("kc,c...->...k", self.freqs, np.asarray(u)) + self.phases

    def value(self, u):
        return self.const + np.sin(self._arg(u)) @ self.amps

    def grad(self, u):
        """(..., 3) first derivatives."""
        return np.einsum("...k,k,kc->...c", np.cos(self._arg(u)), self.amps, self.freqs)

    def hess(self, u):
        """(..., 3, 3) second derivatives."""
        return -np.einsum("...k,k,kc,kd->...cd", np.sin(self._arg(u)), self.amps, self.freqs, self.freqs)


def scalar_multiple_coefficients(grid, rho):
    """Net coefficients for which rho * (separable) are the solutions."""
    u = grid.coords()
    r, dr, ddr = rho.value(u), rho.grad(u), rho.hess(u)
    Gamma = {(i, j): dr[..., i] / r for (i, j) in ORDERED}
    gij = {(i, j): 2 * dr[..., i] * dr[..., j] / r ** 2 - ddr[..., i, j] / r for (i, j) in PAIRS}
    return NetCoefficients(grid, Gamma, gij)


def separable_curves(rng, k, terms=2, amp=0.5, freq=1.0):
    """Three random smooth vector curves a_i: R -> R^k (callables of one variable)."""
    A = rng.uniform(-amp, amp, (3, terms, k))
    W = rng.uniform(0.3, freq, (3, terms))
    P = rng.uniform(0, 2 * np.pi, (3, terms))
    L = rng.normal(size=(3, k))

    def curve(i):
        def a(t):
            t = np.asarray(t, dtype=float)[..., None, None]
            return np.sum(A[i] * np.sin(W[i][:, None] * t + P[i][:, None]), axis=-2) + L[i] * t[..., 0, :]
        return a

    return [curve(i) for i in range(3)]


def scalar_multiple_net(grid, rho, curves, offset):
    """rho(u) * (offset + a0(u0) + a1(u1) + a2(u2)) sampled on the grid."""
    u = grid.coords()
    F = np.asarray(offset, dtype=float) + sum(curves[i](u[i]) for i in range(3))
    return rho.value(u)[..., None] * F


def _zero_g(grid):
    return {k: np.zeros(grid.shape) for k in PAIRS}


def random_gamma(grid, rng, amp=0.4, freq=1.5):
    """Independent smooth random Gamma(i, j): generically no parallel structure at all."""
    u = grid.coords()
    Gamma = {k: TrigSum.random(rng, const=rng.uniform(-amp, amp), amp=amp, freq=freq).value(u)
             for k in ORDERED}
    return NetCoefficients(grid, Gamma, _zero_g(grid))


def log_derivatives(fun, u, step=1e-30):
    """d_i log|fun_j| (shape (3,) + value shape) by complex-step differentiation."""
    u = np.asarray(u, dtype=float)
    base = fun(u)
    out = []
    for i in range(3):
        du = u.astype(complex)
        du[i] = du[i] + 1j * step
        out.append((fun(du).imag / step) / base)
    return base, np.stack(out)


@dataclass(frozen=True)
class _SumOf:
    terms: list

    def value(self, u):
        return sum(t.value(u) for t in self.terms)


@dataclass(frozen=True)
class SeededSection:
    """A section phi with sum -1 and the Gamma that makes it parallel."""

    coeffs: NetCoefficients
    phi: np.ndarray             # grid + (3,)
    lines: tuple                # lines L_i parallel by construction
    min_abs: float              # smallest |phi_j| on the grid


def _seed_phi(rng, lines, amp):
    def pos(axes):
        # a separable log: sum of one-variable terms, so exp(pos) is a product m_a(u_a) m_b(u_b)
        return _SumOf([TrigSum.random(rng, const=0.0, terms=2, amp=amp, freq=1.0, axes=(a,)) for a in axes])

    sr, sw = rng.choice([-1.0, 1.0], 2)
    if 1 in lines:
        R, W = pos((1, 2)), pos((0, 2))
        # the signs are chosen so that 1 + w + r w stays away from 0
        sr, sw = (1.0, sw) if sw > 0 else (1.0, -3.0)

        def phi(u):
            r, w = sr * np.exp(R.value(u)), sw * np.exp(W.value(u))
            p0 = -1.0 / (1.0 + w + r * w)
            return np.stack([p0, r * w * p0, w * p0], axis=-1)
    elif 0 in lines:
        R, Q = pos((1, 2)), TrigSum.random(rng, const=rng.choice([-1.5, 0.8]), amp=amp)
        sr = 1.0 if sr > 0 else -3.0

        def phi(u):
            r, q = sr * np.exp(R.value(u)), Q.value(u)
            p2 = (-1.0 - q) / (1.0 + r)
            return np.stack([q, r * p2, p2], axis=-1)
    else:
        A = TrigSum.random(rng, const=rng.choice([-2.0, 0.7]), amp=amp)
        B = TrigSum.random(rng, const=rng.choice([-0.6, 1.3]), amp=amp)

        def phi(u):
            a, b = A.value(u), B.value(u)
            return np.stack([-1.0 - a - b, a, b], axis=-1)
    return phi


def seeded_section(grid, rng, lines=(), amp=0.3):
    """Gamma(i, j) = 1/2 d_i log|phi_j| for a random admissible phi.

    ``lines`` selects the structure: () for phi alone, (0,) for phi plus a
    parallel L_0, (0, 1) for a flat bundle with L_0 and L_1 parallel.
    """
    lines = tuple(sorted(lines))
    if lines not in ((), (0,), (0, 1)):
        raise ValueError(f"unsupported line set {lines}")
    u = grid.coords()
    for _ in range(100):
        phi = _seed_phi(rng, lines, amp)
        vals, dlog = log_derivatives(phi, u)
        if np.min(np.abs(vals)) > 0.05:
            break
    else:
        raise RuntimeError("no admissible seed found")
    Gamma = {(i, j): 0.5 * dlog[i][..., j] for (i, j) in ORDERED}
    return SeededSection(NetCoefficients(grid, Gamma, _zero_g(grid)), vals, lines,
                         float(np.min(np.abs(vals))))


def l0_coefficients(grid, rng, violate=None, eps=0.3, amp=0.3):
    """Random Gamma with the line L_0 parallel, or violating one displayed condition.

    L_0 is parallel iff xi = exp(psi) solves d_0 xi = 2 Gamma(0,1) xi,
    d_1 xi = 2 Gamma(1,2) xi, d_2 xi = 2 Gamma(2,1) xi and Gamma(0,1) = Gamma(0,2);
    Gamma(1,0), Gamma(2,0) are free.  ``violate="laplace"`` adds a bump to
    Gamma(0,2); ``violate="mixed"`` adds a u1-dependent term to Gamma(2,1).
    """
    u = grid.coords()
    psi = TrigSum.random(rng, const=0.0, amp=amp, freq=1.5)
    dpsi = psi.grad(u)
    Gamma = {(0, 1): 0.5 * dpsi[..., 0], (0, 2): 0.5 * dpsi[..., 0],
             (1, 2): 0.5 * dpsi[..., 1], (2, 1): 0.5 * dpsi[..., 2]}
    for k in ((1, 0), (2, 0)):
        Gamma[k] = TrigSum.random(rng, const=rng.uniform(-amp, amp), amp=amp, freq=1.5).value(u)
    if violate == "laplace":
        r2 = sum((u[k] - c) ** 2 for k, c in enumerate(grid.base_point))
        Gamma[(0, 2)] = Gamma[(0, 2)] + eps * np.exp(-r2 / 0.02)
    elif violate == "mixed":
        Gamma[(2, 1)] = Gamma[(2, 1)] + eps * np.sin(2.0 * u[1] + rng.uniform(0, 2 * np.pi))
    elif violate is not None:
        raise ValueError(f"unknown violation {violate!r}")
    return NetCoefficients(grid, Gamma, _zero_g(grid))


def constant_gamma(grid, values):
    """Constant Gamma(i, j) from a dict (missing entries are zero)."""
    Gamma = {k: np.full(grid.shape, float(values.get(k, 0.0))) for k in ORDERED}
    return NetCoefficients(grid, Gamma, _zero_g(grid))


def synthetic_corpus(grid, seed=0, repeats=2):
    """Labelled coefficient fields covering every generator, for corpus-wide checks.

    Holds the zero and constant-L_0 fields, random Gamma, seeded sections
    with each line structure, L_0 fields with and without a violation,
    scalar multiples of separable nets and both sphere families.
    """
    rng = np.random.default_rng(seed)
    out = [("zero", constant_gamma(grid, {})),
           ("constant-L0", constant_gamma(grid, {(0, 1): 0.3, (0, 2): 0.3, (1, 0): 0.5, (1, 2): -0.2,
                                                 (2, 0): 0.1, (2, 1): 0.7}))]
    for n in range(repeats):
        out.append((f"random-{n}", random_gamma(grid, rng)))
        for lines in ((), (0,), (0, 1)):
            out.append((f"seeded{lines}-{n}", seeded_section(grid, rng, lines).coeffs))
        for violate in (None, "laplace", "mixed"):
            out.append((f"l0-{violate}-{n}", l0_coefficients(grid, rng, violate)))
        rho = TrigSum.random(rng, const=1.0, amp=0.2)
        out.append((f"scalar-multiple-{n}", scalar_multiple_coefficients(grid, rho)))
    out.append(("sphere-family", SeparableSphereNet().net(grid).coeffs))
    out.append(("lorentz-family", lorentz_family().net(grid).coeffs))
    return out
