import json
import os

import numpy as np
import pytest

from avgope.cli import main, policy_from_spec
from avgope.core import load_csv
from avgope.exceptions import InvalidPolicyOutput
from avgope.simulator import ETA_ALWAYS_TREAT, ETA_NO_TREATMENT


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def simulate(path, n=2, t=3, seed=7, model="luckett"):
    return main(["simulate", "--model", model, "--n", str(n), "--t", str(t), "--seed", str(seed), "--out", str(path)])


class TestSimulate:
    def test_rows(self, workdir):
        assert simulate("d.csv") == 0
        assert len((workdir / "d.csv").read_text().strip().splitlines()) == 1 + 6
        data = load_csv("d.csv")
        assert (data.n, data.T, data.d) == (2, 3, 2)

    def test_deterministic(self, workdir):
        simulate("a.csv")
        simulate("b.csv")
        assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()

    def test_missing_out(self, workdir, capsys):
        assert main(["simulate", "--model", "luckett", "--n", "2", "--t", "3", "--seed", "1"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_seed(self, workdir):
        assert main(["simulate", "--model", "luckett", "--n", "2", "--t", "3", "--out", "d.csv"]) == 2
        assert not (workdir / "d.csv").exists()

    def test_unknown_model(self, workdir, capsys):
        assert simulate("d.csv", model="bogus") == 2
        assert "bogus" in capsys.readouterr().err

    def test_finite_mdp(self, workdir):
        mdp = {"num_states": 2, "num_actions": 2, "P": [[[0.5, 0.5], [0.9, 0.1]], [[0.2, 0.8], [0.5, 0.5]]], "r": [[0, 1], [2, 3]]}
        (workdir / "m.json").write_text(json.dumps(mdp))
        assert simulate("d.csv", n=3, t=4, model="mdp:m.json") == 0
        data = load_csv("d.csv")
        assert data.d == 2 and set(np.unique(data.transitions().states)) <= {0.0, 1.0}

    def test_writes_only_declared_output(self, workdir):
        simulate("d.csv")
        assert sorted(os.listdir(workdir)) == ["d.csv"]


class TestEvaluate:
    def test_two_policies(self, workdir):
        simulate("d.csv", n=10, t=10, seed=1)
        rc = main(["evaluate", "--data", "d.csv", "--policy", "always", "--policy", "never", "--seed", "0", "--out", "r.json"])
        assert rc == 0
        doc = json.loads((workdir / "r.json").read_text())
        assert len(doc["policies"]) == 2 and len(doc["contrasts"]) == 1
        assert doc["spec_version"] == "1.0"
        assert sorted(os.listdir(workdir)) == ["d.csv", "r.json"]

    def test_idempotent(self, workdir):
        simulate("d.csv", n=6, t=8, seed=2)
        args = ["evaluate", "--data", "d.csv", "--policy", "uniform", "--seed", "3", "--out"]
        main(args + ["a.json"])
        main(args + ["b.json"])
        assert (workdir / "a.json").read_bytes() == (workdir / "b.json").read_bytes()

    def test_invalid_policy_file(self, workdir, capsys):
        simulate("d.csv", n=4, t=4)
        (workdir / "p.json").write_text(json.dumps({"type": "threshold", "coordinate": 0, "threshold": 0.0, "above": [0.5, 0.6], "below": [1, 0]}))
        rc = main(["evaluate", "--data", "d.csv", "--policy", "p.json", "--seed", "0", "--out", "r.json"])
        assert rc == 1
        assert "InvalidPolicyOutput" in capsys.readouterr().err

    def test_bad_level(self, workdir):
        simulate("d.csv", n=4, t=4)
        assert main(["evaluate", "--data", "d.csv", "--policy", "never", "--level", "1.5", "--seed", "0", "--out", "r.json"]) == 2

    def test_missing_data_file(self, workdir):
        assert main(["evaluate", "--data", "nope.csv", "--policy", "never", "--seed", "0", "--out", "r.json"]) == 1

    def test_score_tables(self, workdir):
        simulate("d.csv", n=6, t=6)
        rc = main(["evaluate", "--data", "d.csv", "--policy", "never", "--seed", "0", "--out", "r.json", "--score-tables", "scores"])
        assert rc == 0
        assert (workdir / "scores" / "scores_0.csv").read_text().startswith("lambda,mu,score")

    def test_estimates_near_oracle(self, workdir):
        simulate("d.csv", n=40, t=50, seed=123)
        main(["evaluate", "--data", "d.csv", "--policy", "always", "--policy", "never", "--seed", "0", "--out", "r.json"])
        doc = json.loads((workdir / "r.json").read_text())
        # Table 1 MADs at n=40, T=50
        assert abs(doc["policies"][0]["eta_hat"] - ETA_ALWAYS_TREAT) < 3 * 0.0427
        assert abs(doc["policies"][1]["eta_hat"] - ETA_NO_TREATMENT) < 3 * 0.0200


class TestPolicySpecs:
    def test_builtins(self):
        S = np.zeros((2, 2))
        np.testing.assert_array_equal(policy_from_spec("always", 2)(S), [[0, 1], [0, 1]])
        np.testing.assert_array_equal(policy_from_spec("never", 2)(S), [[1, 0], [1, 0]])
        np.testing.assert_array_equal(policy_from_spec("always:2", 3)(S), [[0, 0, 1], [0, 0, 1]])
        np.testing.assert_array_equal(policy_from_spec("uniform", 2)(S), [[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(InvalidPolicyOutput):
            policy_from_spec("always:3", 2)

    def test_threshold_named_coordinate(self, tmp_path):
        p = tmp_path / "loc.json"
        p.write_text(json.dumps({"type": "threshold", "coordinate": "s_2", "threshold": 0.0, "above": [0, 1], "below": [1, 0]}))
        pol = policy_from_spec(str(p), 2, 2)
        np.testing.assert_array_equal(pol(np.array([[5.0, 1.0], [5.0, -1.0]])), [[0, 1], [1, 0]])
        assert pol.label == "loc"

    def test_table(self, tmp_path):
        p = tmp_path / "t.json"
        doc = {"type": "table", "coordinates": [0], "edges": [[0.0]], "table": {"0": [1, 0], "1": [0.3, 0.7]}, "default": [0.5, 0.5]}
        p.write_text(json.dumps(doc))
        pol = policy_from_spec(str(p), 2, 1)
        np.testing.assert_allclose(pol(np.array([[-1.0], [1.0]])), [[1, 0], [0.3, 0.7]])

    def test_bad_coordinate(self, tmp_path):
        p = tmp_path / "t.json"
        p.write_text(json.dumps({"type": "threshold", "coordinate": "s_3", "threshold": 0, "above": [0, 1], "below": [1, 0]}))
        with pytest.raises(InvalidPolicyOutput):
            policy_from_spec(str(p), 2, 2)


class TestCoverageCommand:
    def test_smoke(self, workdir):
        (workdir / "c.toml").write_text(
            "n = 6\nT = [4, 5]\nnum_replications = 2\nlambdas = [0.1, 0.001]\nmus = [0.1]\nmax_centers = 100\n"
        )
        assert main(["coverage", "--config", "c.toml", "--out", "out"]) == 0
        rows = (workdir / "out" / "table.csv").read_text().strip().splitlines()
        assert rows[0] == "case,n,T,coverage,MAD,mean_se,sd"
        assert len(rows) == 1 + 3 * 2
        doc = json.loads((workdir / "out" / "study.json").read_text())
        assert len(doc["studies"]) == 2
        assert sorted(os.listdir(workdir / "out")) == ["study.json", "table.csv"]

    def test_unknown_key(self, workdir, capsys):
        (workdir / "c.toml").write_text("n = 6\nT = 4\nwidgets = 3\n")
        assert main(["coverage", "--config", "c.toml", "--out", "out"]) == 2
        assert "widgets" in capsys.readouterr().err

    def test_malformed_toml(self, workdir):
        (workdir / "c.toml").write_text("n = = 6\n")
        assert main(["coverage", "--config", "c.toml", "--out", "out"]) == 2
