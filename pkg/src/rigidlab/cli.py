"""Command-line pipeline: generate -> analyze -> deform -> compare -> extend -> chain, and verify.

    rigidlab <command> --manifest run.json [--out DIR] [--refine FACTOR]

Artifacts go to DIR, or to $RIGIDLAB_OUTPUT_ROOT/<manifest output> (current
directory when the variable is unset).  Exit status: 0 when every check
passes, 1 for invalid input, 2 when a numerical check fails.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import plots
from .conjnet import ORDERED, PAIRS, InconsistentCauchyData, q_residual
from .deform import build_normal_frame, honesty_check, integrate_deformation, sbrana_gram
from .hypersurface import ImmersionError, gauss_parametrize, second_fundamental
from .manifest import ManifestError, RunManifest, build_source
from .numgrid import BlowUpError, Field, GridError, write_field_csv
from .rigidity import (
    ChainError, ExtensionError, PairError, build_extension, chain_construct, extension_metric_compare,
    lambda_section, pair_compare, quotient_dimension,
)
from .sbrana import (
    AdmissibilityError, PathDependenceError, SbranaBundle, TypeBoundError, deformation_section,
    deformation_space, flat_subbundle, line_parallel_tests,
)
from .semilin import SignatureError

log = logging.getLogger("rigidlab")

OUTPUT_ROOT_ENV = "RIGIDLAB_OUTPUT_ROOT"
COMMANDS = ("generate", "analyze", "deform", "compare", "extend", "chain", "verify")
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

VALIDATION_ERRORS = (ManifestError, AdmissibilityError, PairError, GridError, InconsistentCauchyData,
                     SignatureError)
NUMERICAL_ERRORS = (BlowUpError, PathDependenceError, TypeBoundError, ExtensionError, ChainError,
                    ImmersionError, np.linalg.LinAlgError)


def _node(arr, mask=None):
    """Chart node of the largest entry of a field (reduced over trailing axes)."""
    a = np.abs(np.asarray(arr, dtype=float))
    while a.ndim > 3:
        a = a.max(axis=-1)
    if mask is not None:
        a = np.where(mask, a, -np.inf)
    return [int(x) for x in np.unravel_index(int(np.argmax(a)), a.shape)]


def _string_keys(x):
    if isinstance(x, dict):
        return {str(k): _string_keys(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_string_keys(v) for v in x]
    return x


def _dump(path, data):
    path.write_text(json.dumps(_string_keys(data), indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, (set, tuple)):
        return list(x)
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _field_csv(path, grid, values):
    values = np.asarray(values, dtype=float)
    write_field_csv(path, Field(grid, values.reshape(grid.shape + (-1,))))


class Run:
    """State shared by the pipeline stages of one manifest."""

    def __init__(self, manifest, out):
        self.m = manifest
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.tol = manifest.tolerances
        self.grid = manifest.grid()
        self.mask = manifest.box_mask(self.grid)
        self.source = build_source(manifest.source, self.grid, manifest.seed, manifest.root)
        self.checks = []
        self._cache = {}

    # -- bookkeeping ----------------------------------------------------------------
    def check(self, name, value, threshold, passed=None, node=None, detail=None):
        passed = bool(value <= threshold) if passed is None else bool(passed)
        entry = {"check": name, "value": value, "threshold": threshold, "passed": passed}
        if node is not None:
            entry["node"] = node
        if detail is not None:
            entry["detail"] = detail
        self.checks.append(entry)
        (log.info if passed else log.error)("%s: %s (threshold %s)%s", name, value, threshold,
                                            "" if node is None else f" at node {node}")
        return passed

    def subdir(self, name):
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def require_net(self, what):
        if self.source.net is None:
            raise ManifestError(f"{what} needs a net: source {self.source.label!r} only provides coefficients")
        return self.source.net

    # -- stages -----------------------------------------------------------------------
    def immersion(self):
        if "f" not in self._cache:
            net = self.require_net("the hypersurface")
            c = max(2, self.m.nullity_cells)
            h = self.m.spacing
            f = gauss_parametrize(net, (-c * h, c * h), 2 * c + 1)
            self._cache["f"] = (f, second_fundamental(f))
        return self._cache["f"]

    def generate(self):
        net = self.require_net("generate")
        d = self.subdir("net")
        _dump(d / "grid.json", self.grid.to_json())
        write_field_csv(d / "h.csv", net.h)
        write_field_csv(d / "gamma.csv", net.gamma)
        for (i, j) in ORDERED:
            _field_csv(d / f"Gamma_{i}{j}.csv", self.grid, net.coeffs.Gamma[(i, j)])
        for (i, j) in PAIRS:
            _field_csv(d / f"g_{i}{j}.csv", self.grid, net.coeffs.g(i, j))
        qh, qh_max = q_residual(net.h, net.coeffs)
        qg, qg_max = q_residual(net.gamma, net.coeffs)
        self.check("net satisfies the conjugate-chart equations", qh_max, self.tol["q_tol"],
                   node=_node(qh.values, self.grid.interior_mask()))
        self.check("support function satisfies the conjugate-chart equations", qg_max, self.tol["q_tol"],
                   node=_node(qg.values, self.grid.interior_mask()))
        plots.figure_net(d / "net.png", net)
        plots.write_slice_csv(d / "net_slice.csv", self.grid,
                              {"sphericality": np.sum(net.h.values ** 2, -1) - 1, "gamma": net.gamma.scalar()})

        f, ranks = self.immersion()
        di = self.subdir("immersion")
        self._write_immersion(di, f)
        rank = ranks.rank[self.mask]
        ok = self.check("hypersurface has rank 3 on the box", int(np.sum(rank != 3)), 0,
                        node=None if np.all(rank == 3) else _node(ranks.rank != 3, self.mask))
        _dump(di / "report.json", {
            "rank_counts": {str(r): int(np.sum(rank == r)) for r in range(5)},
            "nullity_dimension": {str(r): int(np.sum(ranks.nullity[self.mask] == r)) for r in range(5)},
            "generic": ok,
            "sphericality": net.sphericality(),
            "q_residual": {"h": qh_max, "gamma": qg_max},
            "thresholds": {"rank_rtol": ranks.rtol, "rank_atol": ranks.atol, "q_tol": self.tol["q_tol"]},
            "layout": "components are (s sample, ambient coordinate) flattened row-major",
        })

    def _write_immersion(self, d, imm):
        _field_csv(d / "positions.csv", self.grid, imm.positions)
        _field_csv(d / "frames.csv", self.grid, imm.tangent_frame)
        if imm.second_fundamental is None:
            second_fundamental(imm)
        _field_csv(d / "alpha.csv", self.grid, imm.second_fundamental)

    def analyze(self):
        if "analysis" in self._cache:
            return self._cache["analysis"]
        bundle = SbranaBundle(self.source.coeffs)
        flat = flat_subbundle(bundle, self.tol["flat_tol"])
        lines = line_parallel_tests(bundle, self.tol["line_tol"], self.tol["transport_tol"])
        self.check("flat rank agrees with the holonomy oracle", abs(flat.rank - flat.oracle_rank), 0)
        self.check("line tests are conclusive", len(lines.inconclusive), 0, detail=list(lines.inconclusive))
        q = None
        if flat.admits_phi:
            try:
                q = quotient_dimension(flat.type_t, lines.index_set)
                self.check("type bound min(2, |I|) <= t", 0, 0)
            except TypeBoundError as exc:
                self.check("type bound min(2, |I|) <= t", 1, 0, detail=str(exc))
        else:
            # the bound counts phi together with the lines; without phi there is no deformation
            log.info("flat subbundle has no element with nonzero sum: no honest deformation")
        space = deformation_space(flat)
        d = self.subdir("sbrana")
        if flat.rank:
            _field_csv(d / "basis.csv", self.grid, flat.basis)
        report = {
            "rank_F": flat.rank, "t": flat.type_t, "I": list(lines.index_set), "quotient_dimension": q,
            "admits_phi": flat.admits_phi,
            "deformation_space": {"dim": space.dim, "empty": space.empty, "origin": space.origin,
                                  "directions": space.directions, "reason": space.reason},
            "residuals": {
                "singular_values": flat.singular_values, "oracle_singular_values": flat.oracle_singular_values,
                "rank_interval": flat.rank_interval, "parallel_residual": flat.parallel_residual,
                "laplace": lines.laplace, "mixed": lines.mixed, "auxiliary": lines.auxiliary,
                "transport_leak": lines.transport_leak, "transport_path": lines.transport_path,
            },
            "thresholds": {"flat_tol": flat.tol, "line_tol": lines.tol, "transport_tol": lines.transport_tol},
            "basis_sections": "basis.csv" if flat.rank else None,
        }
        _dump(d / "sbrana_report.json", report)
        plots.figure_sbrana(d / "sbrana.png", bundle, flat)
        self._cache["analysis"] = (bundle, flat, lines, q)
        return self._cache["analysis"]

    def sections(self):
        if "sections" not in self._cache:
            bundle = self.analyze()[0]
            self._cache["sections"] = [deformation_section(bundle, y, tol=self.tol["transport_tol"])
                                       for y in self.m.phis]
        return self._cache["sections"]

    def deform(self):
        if "builds" in self._cache:
            return self._cache["builds"]
        f, _ = self.immersion()
        coeffs = self.source.coeffs
        builds = []
        for n, sec in enumerate(self.sections()):
            d = self.subdir(f"deformation_{n}")
            frame = build_normal_frame(coeffs, sec)
            bd = integrate_deformation(f, coeffs, frame, mask=self.mask)
            hon = honesty_check(f, bd.immersion, sec.phi, mask=self.mask)
            gres, dep = frame.residuals(self.mask)
            merr = bd.metric_error(f, self.mask)
            tag = f"phi[{n}]"
            self.check(f"{tag} frame system is integrable", bd.compatibility, bd.tol)
            self.check(f"{tag} eta Gram equals 1 + delta/phi", gres, self.tol["frame_tol"],
                       node=_node(frame.gram - sbrana_gram(sec.phi), self.mask))
            self.check(f"{tag} sum phi_i eta_i vanishes", dep, self.tol["frame_tol"])
            self.check(f"{tag} g induces the metric of f", merr, self.tol["frame_tol"],
                       node=_node((bd.immersion.metric - f.metric).max(axis=3), self.mask))
            self.check(f"{tag} deformation is honest", hon.min_relative_eigenvalue, hon.tol, passed=hon.honest,
                       detail="lower bound on min |eig| / max |eig| of the xi Gram")
            self._write_immersion(d, bd.immersion)
            _field_csv(d / "phi.csv", self.grid, sec.phi)
            _field_csv(d / "frame.csv", self.grid, bd.frame_values)
            _dump(d / "residuals.json", {
                "phi_base": sec.base_value, "ambient_index": sec.ambient_index,
                "path_dependence": sec.path_dependence, "sum_drift": sec.sum_drift,
                "min_abs_component": sec.min_abs_component,
                "frame_gram": gres, "sum_phi_eta": dep, "normal_path_dependence": frame.path_dependence,
                "compatibility": bd.compatibility, "integrable": bd.integrable, "ruled": bd.ruled_residual,
                "metric_error": merr, "honest": hon.honest, "min_relative_eigenvalue": hon.min_relative_eigenvalue,
                "phi_gram_error": hon.phi_gram_error, "flatness": hon.flatness,
                "thresholds": {"compatibility": bd.tol, "frame_tol": self.tol["frame_tol"], "honesty": hon.tol},
            })
            plots.figure_section(d / "phi.png", self.grid, sec.phi, f"(phi[{n}])")
            plots.write_slice_csv(d / "phi_slice.csv", self.grid, {f"phi{i}": sec.phi[..., i] for i in range(3)})
            builds.append((sec, frame, bd))
        self._cache["builds"] = builds
        return builds

    def compare(self):
        if "pairs" in self._cache:
            return self._cache["pairs"]
        secs = self.sections()
        pairs = []
        for a, b in itertools.combinations(range(len(secs)), 2):
            r = pair_compare(secs[a], secs[b], self.tol["transport_tol"])
            if r.extends:
                self.check(f"phi[{b}] - phi[{a}] lies in L_{r.via}", r.line_residual, self.tol["transport_tol"])
            pairs.append(((a, b), r))
        _dump(self.out / "pair_report.json", {"pairs": [
            {"pair": list(p), "phi": secs[p[0]].base_value, "phi_hat": secs[p[1]].base_value,
             "xi_norms": r.xi_norms, "shared": list(r.shared), "verdict": r.verdict,
             "line_residual": r.line_residual, "max_difference": r.max_difference}
            for p, r in pairs], "thresholds": {"shared_tol": self.tol["transport_tol"]}})
        self._cache["pairs"] = pairs
        return pairs

    def extend(self):
        f, _ = self.immersion()
        builds = self.deform()
        coeffs = self.source.coeffs
        out = []
        for (a, b), r in self.compare():
            if not r.extends:
                continue
            i = r.via
            sides, literal = [], []
            for n in (a, b):
                sec, _, bd = builds[n]
                lam = lambda_section(f, bd, sec, coeffs, index=i, mask=self.mask)
                sides.append(build_extension(f, bd, lam, self.m.t_range, mask=self.mask))
                literal.append(build_extension(f, bd, lam, self.m.t_range, literal=True, mask=self.mask))
                self.check(f"phi[{n}] satisfies the eta_{i} derivative equation", lam.eta_derivative_residual,
                           self.tol["extension_tol"])
            phi_i = builds[a][0].phi[..., i]
            c = extension_metric_compare(sides[0], sides[1], phi_i, self.mask, self.tol["degeneracy_tol"], literal)
            tag = f"extension of pair ({a}, {b}) via {i}"
            dev_field = np.max(np.abs(sides[0].T - sides[1].T), axis=(-1, -2, -3))
            self.check(f"{tag}: T_G = T_G~", c.deviation, self.tol["extension_tol"], node=_node(dev_field, self.mask))
            self.check(f"{tag}: degenerate set is phi_{i} = -1", int(not c.degenerate_match), 0,
                       detail={"schur": len(c.degenerate_nodes), "phi": len(c.phi_degenerate_nodes)})
            self.check(f"{tag}: N_g proportional to eta_{i} with a shared 1-form",
                       max(c.normal_form_difference, c.normal_form_residual), self.tol["extension_tol"])
            out.append({"pair": [a, b], "index": i, "deviation": c.deviation, "literal_deviation": c.literal_deviation,
                        "t0_metric_error": c.t0_metric_error, "t_range": sides[0].t_range,
                        "t_resolution": sides[0].t_resolution, "shrinks": sides[0].shrinks,
                        "jacobian_ratio": min(s.jacobian_ratio for s in sides),
                        "signature_histogram": c.histogram, "degeneracy_locus": c.degenerate_nodes,
                        "phi_level_nodes": c.phi_degenerate_nodes, "degenerate_match": c.degenerate_match,
                        "normal_form_difference": c.normal_form_difference,
                        "normal_form_residual": c.normal_form_residual,
                        "eta_derivative_residual": [s.lam.eta_derivative_residual for s in sides]})
            plots.figure_extension(self.out / f"extension_{a}_{b}.png", self.grid, c, dev_field, phi_i,
                                   self.m.half_width if self.m.pad else None)
            plots.write_slice_csv(self.out / f"extension_{a}_{b}_slice.csv", self.grid,
                                  {"signature": c.signature, "deviation": dev_field, "phi_i": phi_i})
        _dump(self.out / "extension_report.json", {"extensions": out, "thresholds": {
            "extension_tol": self.tol["extension_tol"], "degeneracy_tol": self.tol["degeneracy_tol"],
            "t_range": self.m.t_range}})
        return out

    def chain(self):
        bundle, _, lines, _ = self.analyze()
        secs = self.sections()
        if len(lines.index_set) < 2:
            log.info("no chains: I = %s has fewer than two lines", lines.index_set)
            _dump(self.out / "chain.json", {"chains": [], "I": list(lines.index_set),
                                             "reason": "fewer than two parallel lines"})
            return []
        chains = []
        for (a, b), r in self.compare():
            c = chain_construct(secs[a], secs[b], bundle, lines.index_set, self.tol["transport_tol"])
            steps = [len(pair_compare(x, y, self.tol["transport_tol"]).shared) for x, y in
                     zip(c.sections[:-1], c.sections[1:])]
            self.check(f"chain ({a}, {b}) steps share one component on the grid",
                       sum(s != 1 for s in steps), 0, detail=steps)
            self.check(f"chain ({a}, {b}) stays admissible", len(c.violations), 0,
                       node=next(iter(c.violations.values()))[0] if c.violations else None)
            if r.verdict == "genuine":
                self.check(f"genuine pair ({a}, {b}) is not joined by one extension", int(len(c.base_values) < 3), 0)
            chains.append(((a, b), c))
        _dump(self.out / "chain.json", {"I": list(lines.index_set), "chains": [
            {"pair": list(p), "base_values": c.base_values, "shared": [list(s) for s in c.shared],
             "branch": c.branch, "admissible": c.admissible,
             "violations": {str(k): v[:20] for k, v in c.violations.items()}}
            for p, c in chains]})
        plots.figure_chain(self.out / "chain.png", [c for _, c in chains])
        return chains

    def verify(self):
        self.analyze()
        if self.source.net is not None:
            self.generate()
            if self.m.phis:
                self.deform()
        if self.m.phis:
            self.compare()
            if self.source.net is not None:
                self.extend()
            self.chain()

    def finish(self, command, error=None):
        failed = [c for c in self.checks if not c["passed"]]
        report = {"command": command, "manifest": self.m.to_json(), "grid": self.grid.to_json(),
                  "source": self.source.label, "checks": self.checks, "passed": not failed and error is None,
                  "tolerances": self.tol}
        if error is not None:
            report["error"] = error
        if "analysis" in self._cache:
            _, flat, lines, q = self._cache["analysis"]
            report["summary"] = {"t": flat.type_t, "I": list(lines.index_set), "quotient_dimension": q}
        _dump(self.out / f"{command}_report.json", report)
        return EXIT_OK if report["passed"] else EXIT_NUMERICAL


def output_dir(manifest, out):
    if out is not None:
        return Path(out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
    return root / manifest.output


def run(command, manifest, out=None):
    """Run one command; returns the exit status."""
    if command not in COMMANDS:
        raise ManifestError(f"unknown command {command!r}")
    r = Run(manifest, output_dir(manifest, out))
    try:
        getattr(r, command)()
    except NUMERICAL_ERRORS as exc:
        node = getattr(exc, "node", None)
        msg = f"{type(exc).__name__}: {exc}" + ("" if node is None else f" (node {node})")
        log.error(msg)
        r.finish(command, msg)
        return EXIT_NUMERICAL
    return r.finish(command)


def main(argv=None):
    p = argparse.ArgumentParser(prog="rigidlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--manifest", required=True, help="JSON run manifest")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ROOT_ENV}/<output>)")
    p.add_argument("--refine", type=float, default=1.0, help="divide the grid spacing by this factor")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        manifest = RunManifest.load(args.manifest).refined(args.refine)
        status = run(args.command, manifest, args.out)
    except VALIDATION_ERRORS as exc:
        print(f"rigidlab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if status:
        print(f"rigidlab: {args.command}: numerical checks failed (see {args.command}_report.json)", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
