"""Closed-form test families: spherical conjugate nets with known coefficients and parallel sections.

The nets are normalized translation nets.  With F(u) = c + a0(u0) + a1(u1) + a2(u2)
where the curves a_i live in mutually orthogonal subspaces of R^5 and c is
constant, every scalar multiple of a separable field solves a conjugate-net
system, so h = F/|F| is a conjugate net on S^4 with

    Gamma(i, j) = -P_i'/(2S),   g_ij = -P_i' P_j' / (4 S^2),   S = |F|^2 = P_0 + P_1 + P_2.

Because S is separable the Sbrana connection is flat and its parallel
sections with sum -1 are phi_j = (C_j - P_j(u_j))/S with C_0 + C_1 + C_2 = 0.
The lines L_i are parallel; their normalized sections are (0, 1, -1) S(base)/S.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conjnet import ORDERED, PAIRS, ConjugateNet, NetCoefficients
from .numgrid import Field


@dataclass(frozen=True)
class SeparableSphereNet:
    """Parameters of the normalized translation net (defaults give a generic rank-3 build).

    a0 is a planar spiral in span(e0, e1), a1 a line along e2 with a sine
    wobble in its speed, a2 a planar spiral in span(e3, e4).  Two curved
    directions and one straight one keep the splitting eigenvalues distinct.
    """

    c: tuple = (0.2, -0.1, 0.3, 0.0, 0.0)
    spiral0: tuple = (1.0, 0.2, 0.8)         # radius, radius slope, turning rate of a0
    line1: tuple = (0.5, 0.9, 0.7)           # amplitude, frequency, slope of the speed of a1
    spiral2: tuple = (0.8, 0.3, 1.1)         # radius, radius slope, turning rate of a2
    support: tuple = (2.0, 1.0, 2.0, 0.5)    # constant and quadratic weights of the support numerator

    # -- the three curves and their derivatives ---------------------------------
    @staticmethod
    def _spiral(params, u):
        r0, dr, w = params
        r = r0 + dr * u
        th = w * u
        val = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
        der = np.stack([dr * np.cos(th) - r * w * np.sin(th),
                        dr * np.sin(th) + r * w * np.cos(th)], axis=-1)
        return val, der

    def _line(self, u):
        a, w, s = self.line1
        return a * np.sin(w * u) + s * u, a * w * np.cos(w * u) + s

    def curves(self, u0, u1, u2):
        """Return F (..., 5) and the three derivatives d_i F."""
        c = np.asarray(self.c, dtype=float)
        a0, da0 = self._spiral(self.spiral0, u0)
        p1, dp1 = self._line(u1)
        a2, da2 = self._spiral(self.spiral2, u2)
        shape = np.broadcast(u0, u1, u2).shape
        F = np.broadcast_to(c, shape + (5,)).copy()
        F[..., 0:2] += a0
        F[..., 2] += p1
        F[..., 3:5] += a2
        dF = [np.zeros(shape + (5,)) for _ in range(3)]
        dF[0][..., 0:2] = da0
        dF[1][..., 2] = dp1
        dF[2][..., 3:5] = da2
        return F, dF

    def P(self, i, u):
        """Separable pieces of S = |F|^2 and their derivatives (|c|^2 is folded into P_0)."""
        c = np.asarray(self.c, dtype=float)
        if i == 1:
            p, dp = self._line(u)
            return p ** 2 + 2 * c[2] * p, 2 * (p + c[2]) * dp
        a, da = self._spiral(self.spiral0 if i == 0 else self.spiral2, u)
        cc = c[0:2] if i == 0 else c[3:5]
        val = np.sum(a * a, -1) + 2 * a @ cc
        if i == 0:
            val = val + c @ c
        return val, 2 * np.sum((a + cc) * da, -1)

    def S(self, u0, u1, u2):
        return self.P(0, u0)[0] + self.P(1, u1)[0] + self.P(2, u2)[0]

    # -- sampled objects ------------------------------------------------------------
    def h(self, grid):
        u = grid.coords()
        F, _ = self.curves(*u)
        return Field(grid, F / np.sqrt(self.S(*u))[..., None])

    def gamma(self, grid):
        u = grid.coords()
        sc, t0, t1, t2 = self.support
        num = sc + t0 * u[0] ** 2 + t1 * u[1] ** 2 + t2 * u[2] ** 2
        return Field(grid, num / np.sqrt(self.S(*u)))

    def coefficients(self, grid):
        u = grid.coords()
        S = self.S(*u)
        dP = [self.P(i, u[i])[1] for i in range(3)]
        Gamma = {(i, j): -dP[i] / (2 * S) for (i, j) in ORDERED}
        gij = {(i, j): -dP[i] * dP[j] / (4 * S ** 2) for (i, j) in PAIRS}
        return NetCoefficients(grid, Gamma, gij)

    def net(self, grid):
        return ConjugateNet(self.h(grid), self.coefficients(grid), self.gamma(grid), 4)

    # -- parallel sections --------------------------------------------------------
    def constants_for(self, phi_base, grid):
        """Constants C (sum zero) of the parallel section with value ``phi_base`` at the base point."""
        ub = grid.base_point
        S0 = self.S(*ub)
        phi_base = np.asarray(phi_base, dtype=float)
        if abs(phi_base.sum() + 1) > 1e-12:
            raise ValueError("base value must satisfy sum = -1")
        return np.array([phi_base[i] * S0 + self.P(i, ub[i])[0] for i in range(3)])

    def section(self, phi_base, grid):
        """Exact parallel section through ``phi_base`` sampled on the grid (shape grid + (3,))."""
        u = grid.coords()
        C = self.constants_for(phi_base, grid)
        S = self.S(*u)
        return np.stack([(C[i] - self.P(i, u[i])[0]) / S for i in range(3)], axis=-1)

    def line_section(self, i, grid):
        """Exact parallel section of L_i normalized to e_{i+1} - e_{i+2} at the base."""
        u = grid.coords()
        ratio = self.S(*grid.base_point) / self.S(*u)
        v = np.zeros(3)
        v[(i + 1) % 3], v[(i + 2) % 3] = 1.0, -1.0
        return ratio[..., None] * v

    def phi0_level_node(self, grid, node_u1):
        """Constant C_0 putting the surface phi_0 = -1 on the grid plane u1 = axis(1)[node_u1].

        Only exact when P_2 is constant (a2 a circle centred on the origin of its plane).
        """
        u1 = grid.axis(1)[node_u1]
        return -(self.P(1, u1)[0] + float(np.asarray(self.P(2, 0.0)[0])))

    def phi0_crossing_pair(self, grid, node_u1, kappa=(0.3, -0.3)):
        """Base values of two sections sharing phi_0, with phi_0 = -1 on the plane u1 = axis(1)[node_u1].

        ``kappa`` sets C_1 / S(base) for each section; C_2 follows from sum C = 0.
        """
        ub = grid.base_point
        S0 = self.S(*ub)
        C0 = self.phi0_level_node(grid, node_u1)
        out = []
        for k in kappa:
            C = np.array([C0, k * S0, -C0 - k * S0])
            out.append(np.array([(C[i] - self.P(i, ub[i])[0]) / S0 for i in range(3)]))
        return out


def lorentz_family():
    """Variant whose P_2 is constant so that phi_0 = -1 can sit exactly on grid planes u1 = const."""
    return SeparableSphereNet(spiral2=(0.8, 0.0, 1.1))
