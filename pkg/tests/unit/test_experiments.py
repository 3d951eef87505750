"""
Unit tests for the experiment runners and their output files.
"""
import json
import math

import pandas as pd
import pytest

from dashlab import experiments, metrics
from dashlab.errors import ParameterError
from dashlab.experiments import (CONDITIONAL_DISCREPANCY_NOTE, ExperimentConfig, ExperimentResult,
                                 default_config, run_axiom_validation, run_benchmark,
                                 run_conditional_sweep, run_convergence, run_determinism,
                                 run_diagnostic_correlation, run_flip_sweep, run_information_loss,
                                 run_named, run_permutation_comparison, run_proportionality,
                                 run_ratio_sweep, run_snr_calibration, write_outputs)
from dashlab.settings import Settings

SMALL = ExperimentConfig(n_samples=300, rounds=15, eval_size=50, background_size=10)


class TestExperimentConfig:
    """Test experiment configuration plumbing."""

    @pytest.mark.unit
    def test_shapes_applied(self):
        config = default_config("ratio-sweep", SMALL)
        assert (config.group_count, config.group_size) == (2, 5)
        assert config.learning_rate == 1.0
        assert config.rounds == 15

    @pytest.mark.unit
    def test_unknown_shape_keeps_base(self):
        assert default_config("information-loss", SMALL) == SMALL

    @pytest.mark.unit
    def test_from_settings(self):
        config = ExperimentConfig.from_settings(Settings(rounds=7), max_depth=None, seed=4)
        assert config.rounds == 7
        assert config.max_depth == 1
        assert config.seed == 4

    @pytest.mark.unit
    def test_train_config(self):
        train = SMALL.train_config(max_depth=3)
        assert train.rounds == 15
        assert train.max_depth == 3


class TestWriteOutputs:
    """Test experiment persistence."""

    @pytest.mark.unit
    def test_files_written(self, tmp_path):
        result = ExperimentResult("demo", rows=[{"rho": 0.5, "flip": 0.25}], notes=["checked"],
                                  extras={"k": 1}, plot=[{"x": 0.5, "y": 0.25, "series": "s"}],
                                  timings={"seconds": 0.1})

        target = write_outputs(result, tmp_path)

        assert target == tmp_path / "demo"
        assert pd.read_csv(target / "results.csv").to_dict("records") == [{"rho": 0.5, "flip": 0.25}]
        assert (target / "plot_data.csv").read_text().splitlines()[0] == "x,y,series"
        doc = json.loads((target / "results.json").read_text())
        assert doc["experiment"] == "demo"
        assert doc["notes"] == ["checked"]
        assert doc["timings"]["seconds"] == 0.1
        assert "counters" in doc["timings"]

    @pytest.mark.unit
    def test_empty_plot(self, tmp_path):
        target = write_outputs(ExperimentResult("bare", rows=[{"a": 1}]), tmp_path)
        assert (target / "plot_data.csv").read_text().strip() == "x,y,series"


class TestQuickRunners:
    """Runners small enough for the unit suite."""

    @pytest.mark.unit
    def test_information_loss(self):
        result = run_information_loss(ms=(2, 5), Ms=(1, 25), snr=1.0, trims=(0.0, 0.25))
        frame = result.frame()

        within = frame[frame.kind == "within"]
        assert within.bits.tolist() == pytest.approx([1.0, 6.907], abs=1e-3)
        between = frame[frame.kind == "between"].bits.tolist()
        assert between[1] > between[0]
        assert frame[frame.kind == "trimmed-are"]["are"].tolist() == pytest.approx([1.0, 0.8367], abs=5e-4)
        assert "seconds" in result.timings
        assert result.extras["median_split_variance_share"] == pytest.approx(2 / math.pi)

    @pytest.mark.unit
    def test_unknown_experiment(self):
        with pytest.raises(ParameterError, match="unknown experiment"):
            run_named("nonsense", {}, SMALL)

    @pytest.mark.unit
    def test_ratio_sweep_needs_three_rhos(self):
        with pytest.raises(ParameterError):
            run_ratio_sweep([1], [0.5, 0.9], seeds=2, config=SMALL)

    @pytest.mark.unit
    def test_determinism(self):
        result = run_determinism(seeds=3, rho=0.9, config=SMALL)

        assert len(result.rows) == 3
        assert result.extras["identical"]
        assert len({r["report_sha256"] for r in result.rows}) == 1

    @pytest.mark.unit
    def test_conditional_note(self):
        config = default_config("conditional-sweep", SMALL)
        result = run_conditional_sweep([0.9], [0.2], M=3, config=config)

        assert result.notes == [CONDITIONAL_DISCREPANCY_NOTE]
        assert result.rows[0]["beta_j"] == pytest.approx(1.1)

    @pytest.mark.unit
    def test_conditional_no_note_elsewhere(self):
        config = default_config("conditional-sweep", SMALL)
        assert run_conditional_sweep([0.5], [0.0], M=2, config=config).notes == []

    @pytest.mark.unit
    def test_flip_sweep_row_and_timings(self):
        result = run_flip_sweep([0.5], M=3, config=default_config("flip-sweep", SMALL))

        row = result.rows[0]
        assert row["M"] == 3
        assert 0.0 <= row["within_flip"] <= 0.5
        assert row["theory_within"] == 0.5
        assert result.timings["models_trained"] == 3

    @pytest.mark.unit
    def test_axiom_validation(self):
        config = default_config("axiom-validation", SMALL)
        result = run_axiom_validation(0.5, T=20, seeds=3, config=config)

        assert len(result.rows) == 3
        assert result.extras["theory_ratio"] == pytest.approx(1 / 0.75)
        assert result.rows[0]["theory_gap"] == pytest.approx(0.25 * 20 / 1.75)

    @pytest.mark.unit
    def test_snr_calibration_bins(self):
        config = default_config("snr-calibration", SMALL).with_(group_count=2, group_size=2)
        result = run_snr_calibration(config, rho=0.9, M=5)

        P = config.group_count * config.group_size + config.extras
        assert len(result.rows) == 6
        assert sum(r["n_pairs"] for r in result.rows) <= P * (P - 1) // 2
        for row in result.rows:
            if row["n_pairs"]:
                assert 0.0 <= row["empirical_flip"] <= 0.5

    @pytest.mark.unit
    def test_benchmark_row(self):
        config = default_config("benchmark", SMALL).with_(group_count=1, group_size=2, n_samples=300)
        row = run_benchmark([0.9], M_dash=3, config=config).rows[0]

        assert row["pool"] == 50
        assert row["M_dash"] == 3
        assert 0.0 <= row["single_model_flip"] <= 0.5
        assert 0.0 <= row["dash_flip"] <= 1.0

    @pytest.mark.unit
    def test_permutation_comparison(self):
        config = default_config("permutation-comparison", SMALL).with_(group_count=2, group_size=2)
        result = run_permutation_comparison(rho=0.9, M=4, config=config)

        assert [r["method"] for r in result.rows] == ["shap", "permutation"]
        assert result.rows[0]["n_pairs"] == result.rows[1]["n_pairs"] == 2

    @pytest.mark.unit
    def test_proportionality_rows(self):
        config = default_config("proportionality", SMALL)
        result = run_proportionality([1, 2], rho=0.5, seeds=2, config=config)

        assert [r["depth"] for r in result.rows] == [1, 2]
        assert all(r["cv_mean"] >= 0 for r in result.rows)

    @pytest.mark.unit
    def test_run_named_dispatch(self):
        result = run_named("information-loss", {}, SMALL)
        assert result.name == "information-loss"



    @pytest.mark.unit
    def test_run_named_keeps_zero_options(self, monkeypatch):
        seen = {}

        def fake_convergence(rho, Ms, config):
            seen.update(rho=rho, Ms=Ms)
            return ExperimentResult("convergence", rows=[])

        monkeypatch.setattr(experiments, "run_convergence", fake_convergence)
        run_named("convergence", {"rho": 0.0, "Ms": [1]}, SMALL)

        assert seen == {"rho": 0.0, "Ms": [1]}

    @pytest.mark.unit
    def test_run_named_defaults_for_missing_options(self, monkeypatch):
        seen = {}

        def fake_flip_sweep(rhos, M, config):
            seen.update(rhos=rhos, M=M)
            return ExperimentResult("flip-sweep", rows=[])

        monkeypatch.setattr(experiments, "run_flip_sweep", fake_flip_sweep)
        run_named("flip-sweep", {"rhos": None}, SMALL)

        assert seen["M"] == 50
        assert seen["rhos"][0] == 0.1

    @pytest.mark.unit
    def test_axiom_validation_uncorrelated(self):
        config = default_config("axiom-validation", SMALL)
        result = run_axiom_validation(0.0, T=20, seeds=3, config=config)

        assert result.extras["theory_ratio"] == 1.0
        assert result.extras["analytic"]["ratio"] == 1.0
        assert result.extras["analytic"]["split_gap"] == 0.0

    @pytest.mark.unit
    def test_run_timed_in_metrics(self):
        key = "experiment_seconds{experiment=information-loss}"
        before = len(metrics.metrics.timers[key])

        run_information_loss(ms=(2,), Ms=(1,), trims=(0.0,))

        assert len(metrics.metrics.timers[key]) == before + 1


class TestExperimentTrends:
    """Full-size runs checking the qualitative results."""

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_flip_sweep_within_exceeds_between(self):
        row = run_flip_sweep([0.9], M=50).rows[0]

        assert 0.35 <= row["within_flip"] <= 0.5
        assert row["between_flip"] <= 0.05

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_convergence_reduces_flip(self):
        single, dash = run_convergence(0.9, [1, 25]).rows

        assert dash["consensus_flip"] < 0.05
        assert dash["consensus_flip"] < single["consensus_flip"] / 3
        assert dash["within_group_cv"] < single["within_group_cv"]

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_ratio_sweep_trend(self):
        rhos = [0.3, 0.5, 0.7, 0.9, 0.95]
        result = run_ratio_sweep([1], rhos, seeds=30)
        ratios = {row["rho"]: row["ratio"] for row in result.rows}

        assert 0.4 < result.extras["fitted_alpha"][1] < 0.8
        ordered = [ratios[rho] for rho in rhos]
        assert all(a < b for a, b in zip(ordered, ordered[1:]))

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_conditional_sweep(self):
        result = run_conditional_sweep([0.5, 0.99], [0.0, 0.5, 1.0], M=50)
        cells = {(row["rho"], row["delta_beta"]): row["flip"] for row in result.rows}

        assert 0.4 <= cells[(0.99, 0.0)] <= 0.5
        assert cells[(0.5, 0.5)] <= 0.05
        assert cells[(0.5, 1.0)] <= 0.05

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_diagnostic_correlation_negative(self):
        r = run_diagnostic_correlation(rho=0.9, M=30).extras["pearson_r_between_z_and_flip"]

        assert r is not None
        assert r <= -0.6

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_benchmark_bands(self):
        rows = {row["rho"]: row for row in run_benchmark([0.5, 0.7], M_dash=25).rows}

        assert 0.08 <= rows[0.5]["single_model_flip"] <= 0.30
        assert rows[0.7]["dash_flip"] <= rows[0.7]["single_model_flip"] / 2

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_axiom_validation_ratio(self):
        result = run_axiom_validation(0.5, T=100, seeds=30)

        assert result.extras["ratio"] == pytest.approx(1.32, abs=0.25)
        assert result.rows[0]["theory_first"] == pytest.approx(57.143, abs=1e-3)
        assert result.rows[0]["theory_other"] == pytest.approx(42.857, abs=1e-3)

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_snr_calibration_high_bins(self):
        bins = {row["bin_lo"]: row for row in run_snr_calibration().rows}

        if bins[1.96]["n_pairs"]:
            assert bins[1.96]["empirical_flip"] <= 0.03
        if bins[3.0]["n_pairs"]:
            assert bins[3.0]["empirical_flip"] == pytest.approx(0.0, abs=2e-3)
