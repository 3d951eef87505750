"""
Unit tests for SHAP, permutation and split-count attributions.
"""
import numpy as np
import pytest

from dashlab.attribution import (AttributionMatrix, AttributionMethod, BackgroundSet, attribution_matrix,
                                 brute_force_shap, gain_importance, load_attribution_matrix, permutation_importance,
                                 sample_background, save_attribution_matrix, shap_global, shap_local,
                                 shap_values, split_count_importance, train_and_attribute)
from dashlab.boost import TrainConfig, fit, predict, predict_batch
from dashlab.errors import ParameterError
from dashlab.synthdata import DgpConfig, GroupSpec, sample_dataset
from tests.factories import make_stump_ensemble, tiny_dataset


def _random_case(seed: int, n_features: int = 4, depth: int = 3, rounds: int = 6):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(120, n_features))
    y = X @ rng.normal(size=n_features) + np.sin(3 * X[:, 0]) + rng.normal(scale=0.3, size=120)
    dataset = tiny_dataset(X, y)
    config = TrainConfig(rounds=rounds, max_depth=depth, learning_rate=0.5, subsample=0.8, seed=seed)
    return dataset, fit(dataset, config)


class TestShapValues:
    """Test exact interventional SHAP."""

    @pytest.mark.unit
    def test_efficiency(self, small_ensemble, independent_dataset, background):
        X = independent_dataset.features[:25]
        phi = shap_values(small_ensemble, X, background)
        expected = predict_batch(small_ensemble, X) - predict_batch(small_ensemble, background.rows).mean()
        np.testing.assert_allclose(phi.sum(axis=1), expected, rtol=0, atol=1e-9)

    @pytest.mark.unit
    def test_matches_brute_force(self, small_ensemble, independent_dataset, background):
        for x in independent_dataset.features[:5]:
            np.testing.assert_allclose(shap_local(small_ensemble, x, background).values,
                                       brute_force_shap(small_ensemble, x, background), rtol=0, atol=1e-9)

    @pytest.mark.slow
    @pytest.mark.timeout(30)
    def test_efficiency_many_cases(self):
        """1000 (model, x) cases."""
        worst = 0.0
        for seed in range(50):
            dataset, ensemble = _random_case(seed)
            background = sample_background(dataset, 20, seed)
            X = dataset.features[:20]
            phi = shap_values(ensemble, X, background)
            expected = predict_batch(ensemble, X) - predict_batch(ensemble, background.rows).mean()
            worst = max(worst, float(np.max(np.abs(phi.sum(axis=1) - expected))))
        assert worst < 1e-9

    @pytest.mark.slow
    @pytest.mark.timeout(60)
    def test_oracle_equivalence_many_cases(self):
        """200 cases on models with up to 6 features, depth 3, 16 background rows."""
        worst = 0.0
        for seed in range(20):
            dataset, ensemble = _random_case(seed, n_features=6, depth=3, rounds=4)
            background = sample_background(dataset, 16, seed)
            for x in dataset.features[:10]:
                fast = shap_local(ensemble, x, background).values
                slow = brute_force_shap(ensemble, x, background)
                worst = max(worst, float(np.max(np.abs(fast - slow))))
        assert worst < 1e-9

    @pytest.mark.unit
    def test_zero_tree_ensemble(self):
        rng = np.random.default_rng(0)
        dataset = tiny_dataset(rng.normal(size=(20, 2)), np.ones(20))
        ensemble = fit(dataset, TrainConfig(rounds=5))
        background = sample_background(dataset, 5, 0)

        np.testing.assert_array_equal(shap_global(ensemble, dataset.features, background).values, [0.0, 0.0])

    @pytest.mark.unit
    def test_single_row_global_is_abs_local(self, small_ensemble, independent_dataset, background):
        x = independent_dataset.features[3]
        local = shap_local(small_ensemble, x, background).values
        global_ = shap_global(small_ensemble, x[np.newaxis, :], background).values
        np.testing.assert_allclose(global_, np.abs(local), rtol=0, atol=1e-15)

    @pytest.mark.unit
    def test_duplicated_rows_unchanged(self, small_ensemble, independent_dataset, background):
        X = independent_dataset.features[:10]
        once = shap_global(small_ensemble, X, background).values
        twice = shap_global(small_ensemble, np.vstack([X, X]), background).values
        np.testing.assert_allclose(once, twice, rtol=1e-12, atol=1e-15)

    @pytest.mark.unit
    def test_stump_closed_form(self):
        """A single stump attributes its whole contribution to its feature."""
        ensemble = make_stump_ensemble([0], n_features=2, learning_rate=1.0)
        background = BackgroundSet(rows=np.array([[-1.0, 0.0], [1.0, 0.0]]), seed=0)

        phi = shap_local(ensemble, np.array([2.0, 5.0]), background).values

        np.testing.assert_allclose(phi, [1.0, 0.0])

    @pytest.mark.unit
    def test_dimension_mismatch(self, small_ensemble, background):
        with pytest.raises(ParameterError):
            shap_values(small_ensemble, np.zeros((2, 5)), background)

    @pytest.mark.unit
    def test_brute_force_limit(self):
        ensemble = make_stump_ensemble([0], n_features=13)
        background = BackgroundSet(rows=np.zeros((1, 13)), seed=0)
        with pytest.raises(ParameterError):
            brute_force_shap(ensemble, np.zeros(13), background)


class TestBackground:
    """Test background sampling."""

    @pytest.mark.unit
    def test_empty_rejected(self, independent_dataset):
        with pytest.raises(ParameterError):
            sample_background(independent_dataset, 0, 1)

    @pytest.mark.unit
    def test_capped_and_deterministic(self, independent_dataset):
        a = sample_background(independent_dataset, 10_000, 3)
        b = sample_background(independent_dataset, 10_000, 3)
        assert a.B == independent_dataset.n_samples
        np.testing.assert_array_equal(a.rows, b.rows)


class TestOtherImportances:
    """Test permutation, split-count and gain importances."""

    @pytest.fixture
    def one_signal(self):
        rng = np.random.default_rng(5)
        X = np.column_stack([rng.normal(size=300), np.full(300, 3.0)])
        dataset = tiny_dataset(X, 2 * X[:, 0] + rng.normal(scale=0.1, size=300))
        return dataset, fit(dataset, TrainConfig(rounds=20, max_depth=2, learning_rate=0.3))

    @pytest.mark.unit
    def test_permutation_signal_and_unused(self, one_signal):
        dataset, ensemble = one_signal
        values = permutation_importance(ensemble, dataset, np.arange(100), seed=1).values

        assert values[0] > 0
        assert values[1] == 0

    @pytest.mark.unit
    def test_permutation_needs_ten_rows(self, one_signal):
        dataset, ensemble = one_signal
        with pytest.raises(ParameterError):
            permutation_importance(ensemble, dataset, np.arange(5), seed=1)

    @pytest.mark.unit
    def test_unused_feature_zero_shap(self, one_signal):
        dataset, ensemble = one_signal
        background = sample_background(dataset, 20, 0)
        assert shap_global(ensemble, dataset.features[:50], background).values[1] == 0.0

    @pytest.mark.unit
    def test_split_count_one_hot(self):
        vector = split_count_importance(make_stump_ensemble([2], n_features=4))
        np.testing.assert_array_equal(vector.values, [0, 0, 1, 0])
        assert not vector.flagged

    @pytest.mark.unit
    def test_split_count_no_splits_flagged(self):
        rng = np.random.default_rng(0)
        dataset = tiny_dataset(rng.normal(size=(20, 2)), np.ones(20))
        vector = split_count_importance(fit(dataset, TrainConfig(rounds=3)))
        assert vector.flagged
        np.testing.assert_array_equal(vector.values, [0, 0])

    @pytest.mark.unit
    def test_gain_importance(self, one_signal):
        dataset, ensemble = one_signal
        values = gain_importance(ensemble, dataset).values
        assert values[0] > 0
        assert values[1] == 0


class TestAttributionMatrix:
    """Test multi-seed attribution matrices."""

    @pytest.mark.unit
    def test_rejects_negative(self):
        with pytest.raises(ParameterError):
            AttributionMatrix(values=np.array([[1.0, -0.1]]), seeds=(0,))

    @pytest.mark.unit
    def test_single_model_equals_shap_global(self, pair_dataset, stump_config):
        matrix, ensembles = train_and_attribute(pair_dataset, stump_config, 1, seed_base=3,
                                                background_size=30, eval_size=100)
        train, held_out = pair_dataset.split(100, 2003)
        background = sample_background(train, 30, 1009)

        assert matrix.M == 1
        np.testing.assert_array_equal(matrix.values[0],
                                      shap_global(ensembles[0], held_out.features, background).values)

    @pytest.mark.unit
    def test_deterministic_rows_identical(self, pair_dataset):
        config = TrainConfig(rounds=20, max_depth=1, learning_rate=0.3, subsample=1.0)
        matrix, _ = train_and_attribute(pair_dataset, config, 4, seed_base=0, eval_size=100)
        assert np.all(matrix.values == matrix.values[0])

    @pytest.mark.unit
    def test_metadata(self, pair_dataset, stump_config):
        matrix, _ = train_and_attribute(pair_dataset, stump_config, 3, seed_base=10, eval_size=100)

        assert matrix.seeds == (10, 11, 12)
        assert matrix.group_of == (0, 0)
        assert len(matrix.first_movers) == 3
        assert matrix.eval_slice_seed == 2003
        assert matrix.background_seed == 1009

    @pytest.mark.unit
    def test_resampled_data_mode(self, stump_config):
        dgp = DgpConfig(groups=GroupSpec(1, 2, 0.9), betas=(1.0, 1.0), n_samples=300)
        reference = sample_dataset(dgp)
        matrix, ensembles = train_and_attribute(reference, stump_config, 2, seed_base=1,
                                                eval_size=50, dgp=dgp)
        assert matrix.M == 2
        assert ensembles[0].seed == 1

    @pytest.mark.unit
    def test_split_count_method(self, pair_dataset, stump_config):
        matrix, _ = train_and_attribute(pair_dataset, stump_config, 2, seed_base=0,
                                        method=AttributionMethod.SPLIT_COUNT, eval_size=100)
        np.testing.assert_allclose(matrix.values.sum(axis=1), [1.0, 1.0])

    @pytest.mark.unit
    def test_save_load(self, tmp_path, pair_dataset, stump_config):
        matrix, _ = train_and_attribute(pair_dataset, stump_config, 3, seed_base=0, eval_size=100)
        path = tmp_path / "matrix.csv"
        sidecar = save_attribution_matrix(matrix, path)
        loaded = load_attribution_matrix(path)

        assert sidecar.name == "matrix.json"
        np.testing.assert_array_equal(loaded.values, matrix.values)
        assert loaded.seeds == matrix.seeds
        assert loaded.names == matrix.names
        assert loaded.group_of == matrix.group_of
        assert loaded.first_movers == matrix.first_movers

    @pytest.mark.unit
    def test_attribution_matrix_drops_ensembles(self, pair_dataset, stump_config):
        matrix = attribution_matrix(pair_dataset, stump_config, 2, 5, "split_count", eval_size=100)
        assert matrix.seeds == (5, 6)
        assert matrix.method == AttributionMethod.SPLIT_COUNT

    @pytest.mark.unit
    def test_take(self, pair_dataset, stump_config):
        matrix, _ = train_and_attribute(pair_dataset, stump_config, 3, seed_base=0, eval_size=100)
        sub = matrix.take([2, 0])
        assert sub.seeds == (2, 0)
        np.testing.assert_array_equal(sub.values, matrix.values[[2, 0]])

    @pytest.mark.unit
    def test_m_must_be_positive(self, pair_dataset, stump_config):
        with pytest.raises(ParameterError):
            train_and_attribute(pair_dataset, stump_config, 0, seed_base=0)

    @pytest.mark.unit
    def test_predict_consistent_with_efficiency(self, pair_dataset, stump_config):
        ensemble = fit(pair_dataset, stump_config)
        background = sample_background(pair_dataset, 10, 0)
        x = pair_dataset.features[0]
        total = shap_local(ensemble, x, background).values.sum()
        assert total == pytest.approx(predict(ensemble, x) - predict_batch(ensemble, background.rows).mean(),
                                      abs=1e-9)


class TestSymmetricPair:
    """Exchangeable features get equal attribution on average but not per model."""

    @staticmethod
    def _matrix(rho: float):
        dgp = DgpConfig(groups=GroupSpec(1, 2, rho), betas=(1.0, 1.0), n_samples=1000)
        config = TrainConfig(rounds=100, max_depth=1, learning_rate=0.1, subsample=0.8)
        matrix, _ = train_and_attribute(sample_dataset(dgp), config, 50, seed_base=0, dgp=dgp)
        return matrix.values

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_column_means_within_five_percent(self):
        means = self._matrix(0.5).mean(axis=0)
        assert abs(means[0] - means[1]) <= 0.05 * means.mean()

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_strong_correlation_orders_disagree(self):
        values = self._matrix(0.9)
        means = values.mean(axis=0)
        assert abs(means[0] - means[1]) <= 0.10 * means.mean()
        diff = values[:, 0] - values[:, 1]
        assert (diff > 0).any() and (diff < 0).any()
