"""
Unit tests for the command-line interface and the disclosure report.
"""
import json

import numpy as np
import pytest

from dashlab.attribution import AttributionMatrix
from dashlab.cli import BUILTIN_TEMPLATE, build_parser, load_template, main, render_report
from dashlab.dash import consensus
from dashlab.stability import CorrelationGroups, diagnose_pairs

FAST = ["--rounds", "10", "--eval-size", "50", "--background-size", "10"]


def _generate(tmp_path, groups="1x2", rho="0.9", name="data.csv", *extra):
    path = tmp_path / name
    code = main(["generate", "--groups", groups, "--rho", rho, "--n", "300", "--seed", "3",
                 "-o", str(path), *extra])
    assert code == 0
    return path


class TestParser:
    """Test argument parsing."""

    @pytest.mark.unit
    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["generate", "--groups", "1x2", "-o", "x.csv"])
        assert exc.value.code == 2

    @pytest.mark.unit
    def test_bad_group_shape(self):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["generate", "--groups", "two", "--rho", "0.5", "-o", "x.csv"])
        assert exc.value.code == 2

    @pytest.mark.unit
    def test_training_flag_names(self):
        args = build_parser().parse_args(["train", "--data", "d.csv", "--depth", "3", "--eta", "0.2", "-o", "m"])
        assert args.max_depth == 3
        assert args.learning_rate == 0.2

    @pytest.mark.unit
    def test_invalid_config_exit_two(self, tmp_path):
        config = tmp_path / "run.yaml"
        config.write_text("train: [unclosed\n", encoding="utf-8")
        assert main(["--config", str(config), "generate", "--groups", "1x2", "--rho", "0.5",
                     "-o", str(tmp_path / "d.csv")]) == 2

    @pytest.mark.unit
    def test_missing_config_exit_four(self, tmp_path):
        assert main(["--config", str(tmp_path / "absent.yaml"), "generate", "--groups", "1x2",
                     "--rho", "0.5", "-o", str(tmp_path / "d.csv")]) == 4


class TestGenerate:
    """Test dataset generation."""

    @pytest.mark.unit
    def test_same_seed_same_bytes(self, tmp_path):
        first = _generate(tmp_path, name="a.csv")
        second = _generate(tmp_path, name="b.csv")

        assert first.read_bytes() == second.read_bytes()
        assert first.read_text().splitlines()[0] == "g0_f0,g0_f1,y"

    @pytest.mark.unit
    def test_inadmissible_rho(self, tmp_path):
        code = main(["generate", "--groups", "1x3", "--rho", "-0.9", "-o", str(tmp_path / "x.csv")])
        assert code == 2


class TestTrainAndAttribute:
    """Test the train and attribute commands."""

    @pytest.mark.unit
    def test_train_writes_model(self, tmp_path):
        data = _generate(tmp_path)
        model = tmp_path / "model.json"

        assert main(["train", "--data", str(data), "--rounds", "5", "-o", str(model)]) == 0
        assert len(json.loads(model.read_text())["trees"]) == 5

    @pytest.mark.unit
    def test_zero_rounds_is_usage_error(self, tmp_path):
        data = _generate(tmp_path)
        assert main(["train", "--data", str(data), "--rounds", "0", "-o", str(tmp_path / "m.json")]) == 2

    @pytest.mark.unit
    def test_missing_file(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "absent.csv"), "-o", str(tmp_path / "m.json")])
        assert code == 4

    @pytest.mark.unit
    def test_bad_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,y\n1,2,3\n4,oops,6\n")
        assert main(["train", "--data", str(path), "-o", str(tmp_path / "m.json")]) == 4

    @pytest.mark.unit
    def test_attribute_matrix(self, tmp_path):
        data = _generate(tmp_path)
        out = tmp_path / "matrix.csv"

        assert main(["attribute", "--data", str(data), "-M", "3", *FAST, "-o", str(out)]) == 0
        sidecar = json.loads(out.with_suffix(".json").read_text())
        assert sidecar["seeds"] == [0, 1, 2]
        assert len(out.read_text().splitlines()) == 4

    @pytest.mark.unit
    def test_attribute_records_first_movers(self, tmp_path):
        data = _generate(tmp_path)
        out = tmp_path / "matrix.csv"

        assert main(["attribute", "--data", str(data), "-M", "3", *FAST, "-o", str(out)]) == 0
        sidecar = json.loads(out.with_suffix(".json").read_text())
        assert sidecar["group_of"] == [0, 0]
        assert len(sidecar["first_movers"]) == 3
        assert all(row[0] in (0, 1) for row in sidecar["first_movers"])


class TestDiagnose:
    """Test exit codes of the diagnose command."""

    @pytest.mark.unit
    def test_no_groups_exit_zero(self, tmp_path):
        data = _generate(tmp_path, "1x3", "0")
        out = tmp_path / "report.json"

        assert main(["diagnose", "--data", str(data), *FAST, "-o", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["groups"] == []
        assert report["summary"]["n_unstable"] == 0

    @pytest.mark.unit
    def test_symmetric_pair_exit_three(self, tmp_path):
        data = _generate(tmp_path)
        out = tmp_path / "report.json"

        code = main(["diagnose", "--data", str(data), "--depth", "4", "--rounds", "20", "-o", str(out)])

        assert code == 3
        report = json.loads(out.read_text())
        assert report["groups"] == [[0, 1]]
        assert report["screens"][0]["flagged"]

    @pytest.mark.unit
    def test_csv_with_confirmation(self, tmp_path):
        data = _generate(tmp_path)
        out = tmp_path / "report.csv"

        main(["diagnose", "--data", str(data), "--depth", "4", "--rounds", "20", "--eval-size", "50",
              "--background-size", "10", "--confirm", "--format", "csv", "-o", str(out)])

        header = out.read_text().splitlines()[0].split(",")
        assert "z_split" in header
        assert "verdict" in header


class TestDash:
    """Test the dash command."""

    @pytest.mark.unit
    def test_consensus_json(self, tmp_path):
        data = _generate(tmp_path)
        out = tmp_path / "consensus.json"

        assert main(["dash", "--data", str(data), "-M", "3", *FAST, "-o", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["M"] == 3
        assert doc["method"] == "mean"
        assert len(doc["values"]) == 2
        assert doc["feature_names"] == ["g0_f0", "g0_f1"]
        assert sum(doc["first_mover_counts"]) == 3

    @pytest.mark.unit
    def test_from_matrix(self, tmp_path):
        data = _generate(tmp_path)
        matrix = tmp_path / "matrix.csv"
        main(["attribute", "--data", str(data), "-M", "4", *FAST, "-o", str(matrix)])
        out = tmp_path / "consensus.json"

        assert main(["dash", "--matrix", str(matrix), "--method", "median", "-o", str(out)]) == 0
        assert json.loads(out.read_text())["method"] == "median"

    @pytest.mark.unit
    def test_needs_input(self, tmp_path):
        assert main(["dash", "-o", str(tmp_path / "c.json")]) == 2


class TestReport:
    """Test the disclosure report."""

    @staticmethod
    def _render(values, groups, names=("a", "b", "c")):
        values = np.asarray(values, dtype=np.float64)
        matrix = AttributionMatrix(values=values, seeds=tuple(range(values.shape[0])), names=names)
        corr = CorrelationGroups(threshold=0.5, groups=groups, singletons=[])
        return render_report(
            load_template(None), dataset_name="demo.csv", names=names, n_samples=100,
            groups=groups, within=diagnose_pairs(matrix, corr.within_pairs()),
            between=diagnose_pairs(matrix, corr.between_pairs()),
            result=consensus(matrix, groups=groups), threshold=0.5, z_threshold=1.96,
        )

    @pytest.mark.unit
    def test_unstable_group_paragraph(self):
        text = self._render([[2, 1, 0.1], [1, 2, 0.1], [2, 1, 0.1], [1, 2, 0.1]], [[0, 1]])

        assert ("Features [a, b] form a correlated group (|ρ| > 0.5). Their relative ranking is unstable "
                "across training seeds (estimated flip rate: 50%). They should be interpreted as "
                "interchangeable contributors.") in text
        assert "1. a, b (1.5)" in text
        assert "2. c (0.1)" in text

    @pytest.mark.unit
    def test_single_group_makes_no_between_claim(self):
        text = self._render([[2, 1, 0.1], [1, 2, 0.1], [2, 1, 0.1], [1, 2, 0.1]], [[0, 1]])
        assert "between-group" not in text

    @pytest.mark.unit
    def test_between_groups_stable(self):
        values = [[2, 1, 0.1, 0.2], [1, 2, 0.2, 0.1], [2, 1, 0.1, 0.2], [1, 2, 0.2, 0.1]]
        text = self._render(values, [[0, 1], [2, 3]], names=("a", "b", "c", "d"))

        assert "interchangeable contributors. The between-group ranking is stable (Z > 1.96)." in text

    @pytest.mark.unit
    def test_group_level_text(self):
        text = self._render([[2, 1, 0.1], [1, 2, 0.1], [2, 1, 0.1], [1, 2, 0.1]], [[0, 1]])

        assert ("The correlated group {a, b} contributes a total DASH attribution of 3 to the prediction "
                "(96.8% of total). Within this group, individual feature rankings are unstable across "
                "training seeds (estimated flip rate: 50%). The group's total importance is stable;") in text
        assert "any feature from this group may be chosen" in text

    @pytest.mark.unit
    def test_stable_group_has_no_instability_sentence(self):
        text = self._render([[3, 1, 0.1], [3.2, 1, 0.1], [2.9, 1.1, 0.1]], [[0, 1]])

        assert "The correlated group {a, b} contributes a total DASH attribution of" in text
        assert "Within this group" not in text

    @pytest.mark.unit
    def test_no_instability(self):
        text = self._render([[3, 1, 0.1], [3.2, 1, 0.1], [2.9, 1.1, 0.1]], [[0, 1]])
        assert "No unstable groups were detected" in text

    @pytest.mark.unit
    def test_shipped_template_matches_builtin(self):
        assert load_template("templates/DISCLOSURE_TEMPLATE.md") == BUILTIN_TEMPLATE

    @pytest.mark.unit
    def test_report_command(self, tmp_path):
        data = _generate(tmp_path, "1x3", "0")
        out = tmp_path / "report.md"

        assert main(["report", "--data", str(data), "-M", "3", *FAST, "-o", str(out)]) == 0
        text = out.read_text()
        assert text.startswith("# Attribution stability report")
        assert "No unstable groups were detected" in text


class TestExperimentCommand:
    """Test the experiment command."""

    @pytest.mark.unit
    def test_information_loss(self, tmp_path):
        assert main(["experiment", "information-loss", "--out", str(tmp_path)]) == 0

        target = tmp_path / "information-loss"
        assert (target / "results.csv").exists()
        assert json.loads((target / "results.json").read_text())["experiment"] == "information-loss"
