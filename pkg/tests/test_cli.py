import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from causalid.causal import CausalGraph, ground_truth_lti
from causalid.cli import EXIT_INVALID, EXIT_MISMATCH, EXIT_OK, diff_graph, main
from causalid.dynamics import LtiModel, trajectory_from_csv

ROOT = Path(__file__).resolve().parents[1]
SCEN = ROOT / "scenarios"


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def integrator_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(["--quiet", "run", str(SCEN / "integrator1.json"), "--out", str(out)])
    return rc, out


def test_run_writes_indexed_outputs(integrator_run):
    rc, out = integrator_run
    assert rc == EXIT_OK
    index = json.loads((out / "index.json").read_text())
    assert index["scenario"] == "integrator1"
    for name in index["files"]:
        path = out / name
        assert path.exists(), name
        if name.endswith(".json"):
            json.loads(path.read_text())
        elif name.endswith(".csv"):
            trajectory_from_csv(path)
    graph = CausalGraph.from_json((out / "graph.json").read_text())
    assert graph.input_influence[0, 0]
    assert "Experimental MMD" in (out / "tables.txt").read_text()


def test_run_then_verify(integrator_run, capsys):
    _, out = integrator_run
    assert main(["verify", str(out / "graph.json"), str(SCEN / "integrator1.json")]) == EXIT_OK
    assert "matches" in capsys.readouterr().out


def test_seed_override_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["--quiet", "run", str(SCEN / "integrator1.json"), "--seed", "4", "--out", str(d)]) == EXIT_OK
    assert (a / "graph.json").read_bytes() == (b / "graph.json").read_bytes()
    assert "master_seed: 4" in (a / "generalization.txt").read_text()


@pytest.mark.parametrize(
    "doc",
    [
        {"schema_version": 2, "name": "x", "plant": {"builtin": "integrator1"}, "master_seed": 0},
        {"schema_version": 1, "name": "x", "plant": {"builtin": "nope"}, "master_seed": 0},
        {"schema_version": 1, "name": "x", "plant": {"builtin": "integrator1"}, "master_seed": -1},
        {"schema_version": 1, "name": "x", "plant": {"builtin": "integrator1"}, "master_seed": 0, "extra": 1},
        {"schema_version": 1, "name": "x", "plant": {"type": "lti", "A": [[1, 0]], "B": [[1]]}, "master_seed": 0},
        {"schema_version": 1, "name": "x", "plant": {"builtin": "integrator1"}, "master_seed": 0, "test": {"nu": 1, "bogus": 2}},
    ],
)
def test_malformed_config_exits_2_without_outputs(tmp_path, doc, capsys):
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, doc), "--out", str(out)]) == EXIT_INVALID
    assert not out.exists()
    assert capsys.readouterr().err.startswith("error")


def test_negative_seed_flag_rejected(tmp_path):
    assert main(["run", str(SCEN / "integrator1.json"), "--seed", "-3", "--out", str(tmp_path / "o")]) == EXIT_INVALID


def _truth_graph(A, B, T=100):
    state, inp = ground_truth_lti(A, B, T)
    return CausalGraph(state, inp)


class TestVerify:
    A_C = np.array([[0.9, -0.75, 1.2], [0, 0.9, -1.1], [0, 0, 0.7]])
    B_C = np.array([[0.03, 0, 0], [0, 0.06, 0], [0.07, 0, 0.05]])

    def test_truth_matches(self, tmp_path):
        g = tmp_path / "graph.json"
        g.write_text(_truth_graph(self.A_C, self.B_C).to_json())
        assert main(["--quiet", "verify", str(g), str(SCEN / "appendix_c.json")]) == EXIT_OK

    def test_flipped_edge_reported(self, tmp_path, capsys):
        graph = _truth_graph(self.A_C, self.B_C)
        graph.input_influence[2, 1] = True
        g = tmp_path / "graph.json"
        g.write_text(graph.to_json())
        assert main(["verify", str(g), str(SCEN / "appendix_c.json")]) == EXIT_MISMATCH
        assert "u2->x3" in capsys.readouterr().out

    def test_nonlinear_unsupported(self, tmp_path):
        g = tmp_path / "graph.json"
        g.write_text(CausalGraph(np.ones((2, 2), bool), np.ones((2, 1), bool)).to_json())
        assert main(["verify", str(g), str(SCEN / "bilinear2.json")]) == EXIT_INVALID

    def test_dimension_mismatch_and_missing_file(self, tmp_path):
        g = tmp_path / "graph.json"
        g.write_text(CausalGraph(np.ones((2, 2), bool), np.ones((2, 1), bool)).to_json())
        assert main(["verify", str(g), str(SCEN / "appendix_c.json")]) == EXIT_INVALID
        assert main(["verify", str(tmp_path / "none.json"), str(SCEN / "appendix_c.json")]) == EXIT_INVALID

    def test_zero_matrix_plant(self):
        B = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
        truth = _truth_graph(np.zeros((3, 3)), B)
        # no cross-state edges, input edges exactly where B is nonzero
        assert not truth.state_influence[~np.eye(3, dtype=bool)].any()
        np.testing.assert_array_equal(truth.input_influence, B != 0)
        # self pairs compare x_i(t) - x_i(0); with A = 0 that difference is -x_i(0) + noise,
        # so the start value is visible and the self pair counts as influence
        assert truth.state_influence.diagonal().all()
        assert diff_graph(truth, LtiModel(np.zeros((3, 3)), B), 100) == []


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "causalid", "verify", str(tmp_path / "missing.json"), str(SCEN / "appendix_c.json")],
        capture_output=True,
        text=True,
    )
    assert res.returncode == EXIT_INVALID and "error" in res.stderr
