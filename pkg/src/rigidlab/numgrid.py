"""Finite-difference grid infrastructure over conjugate coordinates (u0, u1, u2).

Fields are plain numpy arrays of shape ``grid.shape + (k,)`` wrapped in a
small immutable container.  Everything here is deterministic: reductions
run in a fixed order and no randomness is involved.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OVERFLOW_GUARD = 1e12


class GridError(ValueError):
    """Invalid grid, field or stencil request."""


class BlowUpError(RuntimeError):
    """Raised when an integrated state exceeds the overflow guard."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


@dataclass(frozen=True)
class ChartGrid:
    ranges: tuple
    resolution: tuple
    base_index: tuple = None

    def __post_init__(self):
        ranges = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
        res = tuple(int(n) for n in self.resolution)
        if len(ranges) != 3 or len(res) != 3:
            raise GridError("a chart grid has exactly three axes")
        for (lo, hi), n in zip(ranges, res):
            if not hi > lo:
                raise GridError(f"empty interval ({lo}, {hi})")
            if n < 5:
                raise GridError(f"resolution {n} < 5 along an axis")
        base = self.base_index
        if base is None:
            base = tuple(n // 2 for n in res)
        base = tuple(int(b) for b in base)
        for b, n in zip(base, res):
            if not 1 <= b <= n - 2:
                raise GridError(f"base index {base} is not interior")
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "base_index", base)

    @classmethod
    def centered(cls, half_width, spacing, center=(0.0, 0.0, 0.0)):
        """Cube of half-width ``half_width`` around ``center`` with the base at the center node."""
        n = int(round(2 * half_width / spacing)) + 1
        ranges = [(c - half_width, c + half_width) for c in center]
        return cls(ranges, (n, n, n), (n // 2,) * 3)

    @property
    def shape(self):
        return self.resolution

    @property
    def spacing(self):
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.ranges, self.resolution))

    @property
    def size(self):
        return int(np.prod(self.resolution))

    def axis(self, i):
        lo, hi = self.ranges[i]
        return np.linspace(lo, hi, self.resolution[i])

    def coords(self):
        """Meshgrid (u0, u1, u2) with ``indexing='ij'``."""
        return np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")

    @property
    def base_point(self):
        return tuple(self.axis(i)[b] for i, b in enumerate(self.base_index))

    def interior_mask(self, margin=2):
        mask = np.zeros(self.shape, dtype=bool)
        sl = tuple(slice(margin, n - margin) for n in self.shape)
        mask[sl] = True
        return mask

    def box_mask(self, half_width):
        """Nodes whose coordinates are within ``half_width`` of the base point (sup norm)."""
        u = self.coords()
        mask = np.ones(self.shape, dtype=bool)
        for ui, c in zip(u, self.base_point):
            mask &= np.abs(ui - c) <= half_width + 1e-12
        return mask

    def to_json(self):
        return {
            "ranges": [list(r) for r in self.ranges],
            "resolution": list(self.resolution),
            "base_index": list(self.base_index),
        }

    @classmethod
    def from_json(cls, data):
        return cls(tuple(tuple(r) for r in data["ranges"]), tuple(data["resolution"]),
                   tuple(data["base_index"]))


@dataclass(frozen=True)
class Field:
    """A k-component field sampled at every grid node; ``values`` has shape grid.shape + (k,)."""

    grid: ChartGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 3:
            vals = vals[..., None]
        if vals.shape[:3] != self.grid.shape or vals.ndim != 4:
            raise GridError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise GridError("field contains non-finite values")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def k(self):
        return self.values.shape[-1]

    def scalar(self):
        if self.k != 1:
            raise GridError("field is not scalar")
        return self.values[..., 0]

    def __add__(self, other):
        return Field(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - _vals(other))

    def __mul__(self, c):
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__


def _vals(x):
    return x.values if isinstance(x, Field) else x


def differentiate(values, spacing, axis, order=2):
    """Derivative of a raw array along ``axis``.

    ``order=2``: central inside, one-sided second order at the ends.
    ``order=4``: five-point central stencil inside with one-sided five-point
    closures in the two outer layers, so repeated differentiation stays
    fourth order up to the boundary.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[axis] < 5:
        raise GridError("need at least 5 nodes along the differentiation axis")
    if order == 2:
        return np.gradient(values, spacing, axis=axis, edge_order=2)
    if order != 4:
        raise GridError(f"unsupported stencil order {order}")
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[2:-2] = v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]
    out[0] = -25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]
    out[1] = -3 * v[0] - 10 * v[1] + 18 * v[2] - 6 * v[3] + v[4]
    out[-1] = 25 * v[-1] - 48 * v[-2] + 36 * v[-3] - 16 * v[-4] + 3 * v[-5]
    out[-2] = 3 * v[-1] + 10 * v[-2] - 18 * v[-3] + 6 * v[-4] - v[-5]
    return np.moveaxis(out / (12 * spacing), 0, axis)


def partial_derivative(f, axis):
    """Derivative of a Field along one chart axis."""
    if axis not in (0, 1, 2):
        raise GridError(f"axis {axis} out of range")
    if not np.all(np.isfinite(f.values)):
        raise GridError("non-finite values")
    return Field(f.grid, differentiate(f.values, f.grid.spacing[axis], axis))


def midpoints(A, interpolation="cubic"):
    """Coefficient values halfway between consecutive samples along the leading axis.

    ``"linear"`` averages the two neighbours (second order); ``"cubic"`` uses
    the four-point stencil (-1, 9, 9, -1)/16 inside and one-sided cubic
    stencils in the first and last interval (fourth order), which keeps the
    RK4 step fourth order for non-polynomial coefficients.
    """
    A = np.asarray(A, dtype=float)
    if interpolation == "linear" or A.shape[0] < 4:
        return 0.5 * (A[:-1] + A[1:])
    if interpolation != "cubic":
        raise GridError(f"unknown interpolation {interpolation!r}")
    mid = np.empty((A.shape[0] - 1,) + A.shape[1:])
    mid[1:-1] = (-A[:-3] + 9 * A[1:-2] + 9 * A[2:-1] - A[3:]) / 16
    mid[0] = (5 * A[0] + 15 * A[1] - 5 * A[2] + A[3]) / 16
    mid[-1] = (5 * A[-1] + 15 * A[-2] - 5 * A[-3] + A[-4]) / 16
    return mid


def _rk4_lines(A, y0, h, b=None, guard=OVERFLOW_GUARD, interpolation="cubic"):
    """March y' = A y + b forward along the leading axis of ``A``.

    ``A`` has shape (n, *batch, d, d), ``y0`` shape (*batch, d, m) and ``b``
    (optional) shape (n, *batch, d, m).  The midpoint stages use coefficients
    interpolated by ``midpoints``.  Returns the states at all n nodes.
    """
    n = A.shape[0]
    out = np.empty((n,) + y0.shape)
    out[0] = y0
    y = y0
    Am = midpoints(A, interpolation)
    bm_all = None if b is None else midpoints(b, interpolation)
    for k in range(n - 1):
        a0, a1, am = A[k], A[k + 1], Am[k]
        if b is None:
            k1 = a0 @ y
            k2 = am @ (y + 0.5 * h * k1)
            k3 = am @ (y + 0.5 * h * k2)
            k4 = a1 @ (y + h * k3)
        else:
            b0, b1, bm = b[k], b[k + 1], bm_all[k]
            k1 = a0 @ y + b0
            k2 = am @ (y + 0.5 * h * k1) + bm
            k3 = am @ (y + 0.5 * h * k2) + bm
            k4 = a1 @ (y + h * k3) + b1
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        norm = np.max(np.abs(y)) if y.size else 0.0
        if not np.isfinite(norm) or norm > guard:
            raise BlowUpError(f"state norm exceeded {guard:g} at step {k + 1}", node=k + 1)
        out[k + 1] = y
    return out


def line_integrate(A, y0, axis, start, spacing, b=None, index_range=None, guard=OVERFLOW_GUARD,
                   interpolation="cubic"):
    """Integrate the linear rule y' = A(u) y + b(u) along one array axis.

    ``A`` is sampled with the integration axis at position ``axis`` and the
    trailing two dimensions being the (d, d) matrix; any other leading axes
    are independent lines integrated together.  ``y0`` holds the state at
    index ``start`` along ``axis`` for every line (shape = batch + (d,) or
    batch + (d, m)).  The solution is marched forward and backward from
    ``start`` over ``index_range`` (default: the whole axis).

    Returns states with the same layout as ``A`` minus its last dimension
    (plus ``m`` if ``y0`` carried one).
    """
    A = np.asarray(A, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    vector = y0.ndim == A.ndim - 2
    if vector:
        y0 = y0[..., None]
        if b is not None:
            b = np.asarray(b, dtype=float)[..., None]
    n = A.shape[axis]
    lo, hi = (0, n - 1) if index_range is None else index_range
    if not lo <= start <= hi:
        raise GridError("start index outside the integration range")
    A_l = np.moveaxis(A, axis, 0)
    b_l = None if b is None else np.moveaxis(b, axis, 0)
    m = y0.shape[-1]
    out = np.full((hi - lo + 1,) + A_l.shape[1:-1] + (m,), np.nan)
    try:
        fwd = _rk4_lines(A_l[start:hi + 1], y0, spacing,
                         None if b_l is None else b_l[start:hi + 1], guard, interpolation)
    except BlowUpError as exc:
        raise BlowUpError(str(exc), node=start + exc.node) from None
    out[start - lo:] = fwd
    if start > lo:
        try:
            bwd = _rk4_lines(A_l[lo:start + 1][::-1], y0, -spacing,
                             None if b_l is None else b_l[lo:start + 1][::-1], guard, interpolation)
        except BlowUpError as exc:
            raise BlowUpError(str(exc), node=start - exc.node) from None
        out[:start - lo + 1] = bwd[::-1]
    out = np.moveaxis(out, 0, axis)
    return out[..., 0] if vector else out


def edge_transport(A, axis, node, spacing):
    """One-step transport matrix along ``axis`` from ``node`` to ``node + e_axis``.

    ``A`` is a full connection coefficient field of shape grid + (d, d).
    """
    nxt = list(node)
    nxt[axis] += 1
    a = np.stack([A[tuple(node)], A[tuple(nxt)]])
    d = a.shape[-1]
    return _rk4_lines(a, np.eye(d), spacing, interpolation="linear")[1]


def plaquette_holonomy(connection, node, axes, spacing):
    """Holonomy of the elementary square at ``node`` spanned by ``axes = (i, j)``.

    ``connection`` is a sequence of three per-axis matrix fields (grid + (d, d))
    encoding the parallel condition d_i y = A_i y.  The loop goes first along
    j, then i, then back along j and back along i, so that for the curvature
    ``F_ij = d_i A_j - d_j A_i + [A_j, A_i]`` the result is ``Id - h^2 F_ij + O(h^3)``.
    """
    i, j = axes
    node = tuple(int(x) for x in node)
    shape = np.asarray(connection[0]).shape[:3]
    for ax in (i, j):
        if not 0 <= node[ax] < shape[ax] - 1:
            raise GridError("plaquette leaves the grid")
    hi, hj = spacing[i], spacing[j]
    node_i = list(node)
    node_i[i] += 1
    node_j = list(node)
    node_j[j] += 1
    p_j = edge_transport(connection[j], j, node, hj)
    p_i_after_j = edge_transport(connection[i], i, node_j, hi)
    p_i = edge_transport(connection[i], i, node, hi)
    p_j_after_i = edge_transport(connection[j], j, node_i, hj)
    return np.linalg.solve(p_j_after_i @ p_i, p_i_after_j @ p_j)


# -- CSV field dumps ---------------------------------------------------------

def write_field_csv(path, f):
    path = Path(path)
    vals = f.values
    k = vals.shape[-1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i0", "i1", "i2"] + [f"c{c}" for c in range(k)])
        for idx in np.ndindex(*vals.shape[:3]):
            w.writerow(list(idx) + [f"{v:.17g}" for v in vals[idx]])


def read_field_csv(path, grid):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        k = len(header) - 3
        vals = np.empty(grid.shape + (k,))
        seen = 0
        for row in r:
            idx = tuple(int(x) for x in row[:3])
            vals[idx] = [float(x) for x in row[3:]]
            seen += 1
    if seen != grid.size:
        raise GridError(f"{path}: expected {grid.size} rows, got {seen}")
    return Field(grid, vals)
