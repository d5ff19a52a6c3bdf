import json

import numpy as np
import pytest

from rigidlab.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, OUTPUT_ROOT_ENV, main
from rigidlab.manifest import Expression, ManifestError, RunManifest

ZERO_GAMMA = {
    "grid": {"half_width": 0.1, "spacing": 0.02},
    "source": {"kind": "expressions", "Gamma": {}, "g": {}},
    "phi": [[1, -1, -1], [1, -3, 1], [2, -1, -2]],
    "output": "zero",
}
FAMILY = {
    "grid": {"half_width": 0.2, "spacing": 0.04},
    "source": {"kind": "family"},
    "phi": [[0.5, -0.6, -0.9], [0.5, -1.0, -0.5]],
    "tolerances": {"flat_tol": 1e-4, "frame_tol": 1e-4, "extension_tol": 1e-4},
    "output": "family",
}


def write(tmp_path, data, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def report(path):
    return json.loads(path.read_text())


# -- expressions and manifests -------------------------------------------------------------

def test_expression_grammar_evaluates():
    u = (np.array([0.0, 1.0]), np.array([2.0, 0.5]), np.array([0.0, np.pi]))
    e = Expression("1 + 2 * u0 - u1 / 2 + u0 ** 2 + sin(u2) + cos(0) * exp(0) - -pi")
    assert np.allclose(e(u), 1 + 2 * u[0] - u[1] / 2 + u[0] ** 2 + np.sin(u[2]) + 1 + np.pi)


@pytest.mark.parametrize("text, fragment", [
    ("0.3 * sin(u2", "column"),
    ("tan(u0)", "only sin, cos and exp"),
    ("u3 + 1", "unknown name"),
    ("u0 ^ 2", "operator not allowed"),
    ("'a'", "not a number"),
    ("[u0]", "not part of the grammar"),
])
def test_expression_grammar_rejects(text, fragment):
    with pytest.raises(ManifestError, match=fragment):
        Expression(text)


@pytest.mark.parametrize("patch, fragment", [
    ({"phi": [[1, 0, -2]]}, "zero entry"),
    ({"phi": [[1, 1, 1]]}, "sum to -1"),
    ({"tolerances": {"q_tol": -1}}, "positive"),
    ({"tolerances": {"bogus": 1}}, "unknown tolerance"),
    ({"extra": 1}, "unknown manifest keys"),
    ({"grid": {"spacing": 0.1}}, "half_width"),
    ({"t_range": [0.1, 0.2]}, "t_range"),
])
def test_manifest_validation(patch, fragment):
    with pytest.raises(ManifestError, match=fragment):
        RunManifest.from_dict({**ZERO_GAMMA, **patch})


def test_refine_divides_spacing():
    coarse = RunManifest.from_dict(ZERO_GAMMA)
    fine = coarse.refined(2)
    assert fine.spacing == 0.01
    count = [int(m.box_mask(m.grid()).sum()) for m in (coarse, fine)]
    assert count == [11 ** 3, 21 ** 3]


# -- commands --------------------------------------------------------------------------------

def test_verify_zero_gamma(tmp_path):
    out = tmp_path / "out"
    assert main(["verify", "--manifest", write(tmp_path, ZERO_GAMMA), "--out", str(out)]) == EXIT_OK
    rep = report(out / "verify_report.json")
    assert rep["summary"] == {"t": 2, "I": [0, 1, 2], "quotient_dimension": 0}
    assert rep["tolerances"]["transport_tol"] == 1e-7
    sb = report(out / "sbrana" / "sbrana_report.json")
    assert sb["rank_F"] == 3 and sb["thresholds"]["flat_tol"] == 1e-6


def test_compare_reports_shared_component(tmp_path):
    out = tmp_path / "out"
    assert main(["compare", "--manifest", write(tmp_path, ZERO_GAMMA), "--out", str(out)]) == EXIT_OK
    first = report(out / "pair_report.json")["pairs"][0]
    assert first["shared"] == [0] and first["verdict"] == "extends_via(0)"
    assert np.allclose(first["xi_norms"], [0, 2 / 3, 2])


def test_chain_json(tmp_path):
    out = tmp_path / "out"
    assert main(["chain", "--manifest", write(tmp_path, ZERO_GAMMA), "--out", str(out)]) == EXIT_OK
    chains = report(out / "chain.json")["chains"]
    genuine = [c for c in chains if c["pair"] == [1, 2]][0]
    assert len(genuine["base_values"]) == 3 and all(len(s) == 1 for s in genuine["shared"])
    assert (out / "chain.png").stat().st_size > 0


def test_malformed_expression_exits_with_location(tmp_path, capsys):
    bad = {**ZERO_GAMMA, "source": {"kind": "expressions", "Gamma": {"01": "0.3 * (u0 +"}}}
    assert main(["analyze", "--manifest", write(tmp_path, bad), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "column" in capsys.readouterr().err


def test_missing_manifest_is_invalid(tmp_path):
    assert main(["analyze", "--manifest", str(tmp_path / "nope.json")]) == EXIT_INVALID


def test_numerical_failure_exits_two(tmp_path):
    # a separable net that is not spherical: the conjugate-chart equations hold, rank 3 fails
    data = {"grid": {"half_width": 0.1, "spacing": 0.02},
            "source": {"kind": "expressions",
                       "cauchy": {"h": ["sin(u0)", "u1 ** 2", "cos(u2)", "1 + u0", "exp(u1)"], "gamma": "1 + u2"}}}
    out = tmp_path / "out"
    assert main(["generate", "--manifest", write(tmp_path, data), "--out", str(out)]) == EXIT_NUMERICAL
    rep = report(out / "generate_report.json")
    failed = [c for c in rep["checks"] if not c["passed"]]
    assert failed and all("node" in c for c in failed)
    assert all(c["passed"] for c in rep["checks"] if "conjugate-chart" in c["check"])


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert main(["analyze", "--manifest", write(tmp_path, ZERO_GAMMA)]) == EXIT_OK
    assert (tmp_path / "root" / "zero" / "analyze_report.json").exists()


def test_family_pipeline_is_deterministic(tmp_path):
    path = write(tmp_path, FAMILY)
    runs = []
    for n in range(2):
        out = tmp_path / f"out{n}"
        assert main(["verify", "--manifest", path, "--out", str(out)]) == EXIT_OK
        runs.append(out)
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
    assert any(p.suffix == ".png" for p in files) and any(p.suffix == ".csv" for p in files)
    assert (runs[0] / "extension_report.json").exists() and (runs[0] / "deformation_1" / "phi.csv").exists()
    for p in files:
        assert (runs[0] / p).read_bytes() == (runs[1] / p).read_bytes(), p
    ext = report(runs[0] / "extension_report.json")["extensions"][0]
    assert ext["index"] == 0 and ext["deviation"] <= 1e-4 and ext["degenerate_match"]


def test_csv_source_round_trip(tmp_path):
    out = tmp_path / "gen"
    small = {**FAMILY, "phi": []}
    assert main(["generate", "--manifest", write(tmp_path, small), "--out", str(out)]) == EXIT_OK
    again = {**small, "source": {"kind": "csv", "dir": str(out / "net")}}
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["analyze", "--manifest", write(tmp_path, small, "s.json"), "--out", str(a)]) == EXIT_OK
    assert main(["analyze", "--manifest", write(tmp_path, again, "c.json"), "--out", str(b)]) == EXIT_OK
    ra, rb = report(a / "sbrana" / "sbrana_report.json"), report(b / "sbrana" / "sbrana_report.json")
    assert (ra["rank_F"], ra["I"]) == (rb["rank_F"], rb["I"])
