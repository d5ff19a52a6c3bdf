"""Run manifests: grid, coefficient source, sections and tolerances for one pipeline run.

A manifest is a JSON document.  Closed-form fields are strings over
(u0, u1, u2) in a small grammar: numeric literals, + - * /, ** for powers,
parentheses, sin, cos, exp and the constant pi.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conjnet import ORDERED, PAIRS, ConjugateNet, NetCoefficients, axis_data, dmz_integrate, solve_support
from .corpus import random_gamma, seeded_section
from .families import SeparableSphereNet, lorentz_family
from .hypersurface import BOUNDARY_LAYER
from .numgrid import ChartGrid, read_field_csv

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
VARIABLES = ("u0", "u1", "u2")
BINARY = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}
UNARY = {ast.USub: np.negative, ast.UAdd: np.positive}

DEFAULT_TOLERANCES = {
    "q_tol": 1e-4,
    "flat_tol": 1e-6,
    "line_tol": 1e-6,
    "transport_tol": 1e-7,
    "frame_tol": 1e-5,
    "signature_tol": 1e-8,
    "degeneracy_tol": 1e-6,
    "extension_tol": 1e-5,
}


class ManifestError(ValueError):
    """Invalid manifest: the message names the offending entry."""


# -- expressions -------------------------------------------------------------------

class Expression:
    """A parsed closed-form scalar field over (u0, u1, u2)."""

    def __init__(self, text, where="expression"):
        self.text = str(text)
        try:
            tree = ast.parse(self.text.strip(), mode="eval")
        except SyntaxError as exc:
            raise ManifestError(f"{where}: cannot parse {self.text!r} at column {exc.offset}: {exc.msg}") from None
        self._check(tree.body, where)
        self.tree = tree.body

    def _check(self, node, where):
        def fail(msg):
            col = getattr(node, "col_offset", 0) + 1
            raise ManifestError(f"{where}: {msg} at column {col} of {self.text!r}")

        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                fail(f"literal {node.value!r} is not a number")
        elif isinstance(node, ast.Name):
            if node.id not in VARIABLES and node.id != "pi":
                fail(f"unknown name {node.id!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in BINARY:
                fail("operator not allowed (use + - * / **)")
            self._check(node.left, where)
            self._check(node.right, where)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in UNARY:
                fail("unary operator not allowed")
            self._check(node.operand, where)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                fail("only sin, cos and exp may be called")
            if len(node.args) != 1 or node.keywords:
                fail(f"{node.func.id} takes one argument")
            self._check(node.args[0], where)
        else:
            fail(f"{type(node).__name__} is not part of the grammar")

    def __call__(self, u):
        """Evaluate on coordinate arrays u = (u0, u1, u2), broadcast to their shape."""
        env = dict(zip(VARIABLES, u), pi=np.pi)

        def ev(node):
            if isinstance(node, ast.Constant):
                return float(node.value)
            if isinstance(node, ast.Name):
                return env[node.id]
            if isinstance(node, ast.BinOp):
                return BINARY[type(node.op)](ev(node.left), ev(node.right))
            if isinstance(node, ast.UnaryOp):
                return UNARY[type(node.op)](ev(node.operand))
            return FUNCTIONS[node.func.id](ev(node.args[0]))

        with np.errstate(all="ignore"):
            out = np.broadcast_to(ev(self.tree), np.broadcast(*u).shape).astype(float)
        if not np.all(np.isfinite(out)):
            raise ManifestError(f"{self.text!r} is not finite on the grid")
        return out


# -- sources ------------------------------------------------------------------------

@dataclass
class Source:
    """Coefficients of the run, with the net when the source defines one."""

    coeffs: NetCoefficients
    net: ConjugateNet = None
    exact_phi: np.ndarray = None      # parallel section known in closed form (seeded corpus)
    label: str = ""


def _pair_key(key, where):
    k = str(key).replace(",", "").replace("(", "").replace(")", "").replace(" ", "")
    if len(k) != 2 or not k.isdigit() or k[0] == k[1] or max(k) > "2":
        raise ManifestError(f"{where}: bad index pair {key!r}")
    return int(k[0]), int(k[1])


def _expression_source(spec, grid):
    u = grid.coords()
    Gamma = {k: np.zeros(grid.shape) for k in ORDERED}
    for key, text in spec.get("Gamma", {}).items():
        i, j = _pair_key(key, "Gamma")
        Gamma[(i, j)] = Expression(text, f"Gamma[{key}]")(u)
    gij = {k: np.zeros(grid.shape) for k in PAIRS}
    for key, text in spec.get("g", {}).items():
        i, j = sorted(_pair_key(key, "g"))
        gij[(i, j)] = Expression(text, f"g[{key}]")(u)
    coeffs = NetCoefficients(grid, Gamma, gij)
    cauchy = spec.get("cauchy")
    if not cauchy:
        return Source(coeffs, label="expressions")
    try:
        h_exprs = [Expression(t, f"cauchy.h[{n}]") for n, t in enumerate(cauchy["h"])]
        g_expr = Expression(cauchy["gamma"], "cauchy.gamma")
    except KeyError as exc:
        raise ManifestError(f"cauchy data needs {exc.args[0]!r}") from None
    hvals = np.stack([e(u) for e in h_exprs], axis=-1)
    h = dmz_integrate(coeffs, axis_data(hvals, grid))
    gamma = solve_support(coeffs, axis_data(g_expr(u), grid))
    return Source(coeffs, ConjugateNet(h, coeffs, gamma, len(h_exprs) - 1), label="expressions")


def _csv_source(spec, grid, root):
    d = Path(spec["dir"])
    d = d if d.is_absolute() else root / d
    Gamma = {(i, j): read_field_csv(d / f"Gamma_{i}{j}.csv", grid).scalar() for (i, j) in ORDERED}
    gij = {(i, j): read_field_csv(d / f"g_{i}{j}.csv", grid).scalar() for (i, j) in PAIRS}
    coeffs = NetCoefficients(grid, Gamma, gij)
    if not (d / "h.csv").exists():
        return Source(coeffs, label=f"csv:{d}")
    h = read_field_csv(d / "h.csv", grid)
    gamma = read_field_csv(d / "gamma.csv", grid)
    return Source(coeffs, ConjugateNet(h, coeffs, gamma, h.k - 1), label=f"csv:{d}")


def build_source(spec, grid, seed, root=Path(".")):
    kind = spec.get("kind")
    if kind in ("family", "lorentz"):
        base = lorentz_family() if kind == "lorentz" else SeparableSphereNet()
        params = {k: tuple(v) for k, v in spec.get("params", {}).items()}
        try:
            fam = type(base)(**{**base.__dict__, **params})
        except TypeError as exc:
            raise ManifestError(f"family parameters: {exc}") from None
        net = fam.net(grid)
        return Source(net.coeffs, net, label=kind)
    if kind == "expressions":
        return _expression_source(spec, grid)
    if kind == "csv":
        return _csv_source(spec, grid, root)
    rng = np.random.default_rng(seed)
    if kind == "seeded":
        ss = seeded_section(grid, rng, tuple(spec.get("lines", ())))
        return Source(ss.coeffs, exact_phi=ss.phi, label="seeded")
    if kind == "random":
        return Source(random_gamma(grid, rng, spec.get("amp", 0.4), spec.get("freq", 1.5)), label="random")
    raise ManifestError(f"unknown source kind {kind!r} (family, lorentz, expressions, csv, seeded, random)")


# -- the manifest ------------------------------------------------------------------

@dataclass
class RunManifest:
    half_width: float
    spacing: float
    center: tuple = (0.0, 0.0, 0.0)
    pad: bool = True
    source: dict = field(default_factory=lambda: {"kind": "family"})
    phis: list = field(default_factory=list)
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    t_range: tuple = (-0.05, 0.05)
    nullity_cells: int = 2
    output: str = "run"
    seed: int = 0
    root: Path = Path(".")

    @classmethod
    def from_dict(cls, data, root=Path(".")):
        if not isinstance(data, dict):
            raise ManifestError("manifest must be a JSON object")
        unknown = set(data) - {"grid", "source", "phi", "tolerances", "t_range", "nullity_cells", "output", "seed"}
        if unknown:
            raise ManifestError(f"unknown manifest keys {sorted(unknown)}")
        grid = data.get("grid")
        if not isinstance(grid, dict) or "half_width" not in grid or "spacing" not in grid:
            raise ManifestError("grid needs half_width and spacing")
        tol = dict(DEFAULT_TOLERANCES)
        for k, v in data.get("tolerances", {}).items():
            if k not in DEFAULT_TOLERANCES:
                raise ManifestError(f"unknown tolerance {k!r}")
            if not isinstance(v, (int, float)) or not v > 0:
                raise ManifestError(f"tolerance {k} must be positive, got {v!r}")
            tol[k] = float(v)
        phis = []
        for n, y in enumerate(data.get("phi", [])):
            y = np.asarray(y, dtype=float)
            if y.shape != (3,):
                raise ManifestError(f"phi[{n}] must have three entries")
            if np.any(y == 0):
                raise ManifestError(f"phi[{n}] = {y.tolist()} has a zero entry")
            if abs(y.sum() + 1) > 1e-9:
                raise ManifestError(f"phi[{n}] = {y.tolist()} does not sum to -1")
            phis.append(y)
        t_range = tuple(float(x) for x in data.get("t_range", (-0.05, 0.05)))
        if len(t_range) != 2 or not t_range[0] < 0 < t_range[1]:
            raise ManifestError("t_range must be (lo, hi) with lo < 0 < hi")
        if float(grid["half_width"]) <= 0 or float(grid["spacing"]) <= 0:
            raise ManifestError("grid half_width and spacing must be positive")
        return cls(float(grid["half_width"]), float(grid["spacing"]), tuple(grid.get("center", (0.0, 0.0, 0.0))),
                   bool(grid.get("pad", True)), data.get("source", {"kind": "family"}), phis, tol, t_range,
                   int(data.get("nullity_cells", 2)), str(data.get("output", "run")), int(data.get("seed", 0)),
                   Path(root))

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        except OSError as exc:
            raise ManifestError(f"{path}: {exc.strerror}") from None
        return cls.from_dict(data, path.parent)

    def refined(self, factor):
        if factor < 1:
            raise ManifestError("refine factor must be >= 1")
        out = RunManifest(**self.__dict__)
        out.spacing = self.spacing / factor
        return out

    def grid(self):
        pad = BOUNDARY_LAYER * self.spacing if self.pad else 0.0
        return ChartGrid.centered(self.half_width + pad, self.spacing, self.center)

    def box_mask(self, grid):
        """Nodes where checks are evaluated: the physical box, or the interior if unpadded."""
        return grid.box_mask(self.half_width) if self.pad else grid.interior_mask(BOUNDARY_LAYER)

    def to_json(self):
        return {
            "grid": {"half_width": self.half_width, "spacing": self.spacing, "center": list(self.center),
                     "pad": self.pad},
            "source": self.source,
            "phi": [y.tolist() for y in self.phis],
            "tolerances": self.tolerances,
            "t_range": list(self.t_range),
            "nullity_cells": self.nullity_cells,
            "output": self.output,
            "seed": self.seed,
        }
