import numpy as np
import pytest

from binuq import (
    BinningConfig,
    BinningStrategy,
    ClassifierKind,
    ClassifierSpec,
    EnsembleSpec,
    ProbabilisticPrediction,
    SeededRng,
    assign_bins,
    default_ensemble_spec,
    fit_binned_adapter,
    fit_ensemble,
    mix_predictions,
    predict_distribution,
    predict_ensemble,
    predict_ensemble_batch,
    validate_dataset,
)
from binuq.core import AllConfigsDegenerate, DegenerateTarget
from conftest import make_dataset

RF = ClassifierSpec(ClassifierKind.RANDOM_FOREST, {"max_depth": 4})
UNI4 = BinningConfig(BinningStrategy.UNIFORM, 4)


class TestAdapterMoments:
    # Reconstruction from classifier probabilities: mean is the
    # probability-weighted midpoint sum, std the matching spread.

    def test_one_hot_is_point_mass(self):
        p = ProbabilisticPrediction.from_probabilities([1, 3, 5], [0, 1, 0])
        assert p.mean == 3.0 and p.std == 0.0

    def test_symmetric_two_bins(self):
        p = ProbabilisticPrediction.from_probabilities([0, 2], [0.5, 0.5])
        assert p.mean == 1.0 and p.std == 1.0

    def test_three_bin_example(self):
        p = ProbabilisticPrediction.from_probabilities([1, 3, 5], [0.2, 0.5, 0.3])
        assert p.mean == pytest.approx(3.2, abs=1e-15)
        assert p.std == pytest.approx(1.4, abs=1e-12)


class TestFitAdapter:
    def test_constant_target_propagates(self):
        ds = validate_dataset(np.random.default_rng(0).uniform(size=(20, 2)),
                              np.full(20, 3.3))
        with pytest.raises(DegenerateTarget):
            fit_binned_adapter(ds, UNI4, RF, SeededRng(0))

    def test_uniform_edges_span_target(self):
        ds = make_dataset(n=50, d=1, seed=2)
        model = fit_binned_adapter(
            ds, BinningConfig(BinningStrategy.UNIFORM, 5), RF, SeededRng(0)
        )
        assert model.bins.edges[0] == ds.target.min()
        assert model.bins.edges[-1] == ds.target.max()

    def test_quantile_occupancy(self):
        ds = make_dataset(n=50, d=1, seed=2)
        model = fit_binned_adapter(
            ds, BinningConfig(BinningStrategy.QUANTILE, 5), RF, SeededRng(0)
        )
        counts = np.bincount(assign_bins(ds.target, model.bins))[1:]
        assert np.array_equal(counts, [10, 10, 10, 10, 10])

    def test_prediction_is_valid_distribution(self):
        ds = make_dataset(n=40)
        model = fit_binned_adapter(ds, UNI4, RF, SeededRng(0))
        pred = predict_distribution(model, ds.features[0])
        assert pred.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.array_equal(pred.support, model.bins.midpoints)


class TestEnsemble:
    def test_single_member_identity(self):
        ds = make_dataset(n=60)
        spec = EnsembleSpec.uniform_weights([UNI4])
        ens = fit_ensemble(ds, spec, RF, SeededRng(3))
        member_preds = [
            predict_distribution(ens.members[0], x) for x in ds.features[:10]
        ]
        ens_preds = predict_ensemble_batch(ens, ds.features[:10])
        for a, b in zip(ens_preds, member_preds):
            assert np.array_equal(a.support, b.support)
            assert np.array_equal(a.probs, b.probs)
            assert a.mean == b.mean and a.std == b.std

    def test_default_spec_has_eight_members(self):
        spec = default_ensemble_spec()
        assert len(spec.configs) == 8
        assert np.allclose(spec.weights, 1.0 / 8.0, atol=0)
        kinds = {(c.strategy, c.k) for c in spec.configs}
        assert kinds == {
            (s, k)
            for s in (BinningStrategy.UNIFORM, BinningStrategy.QUANTILE)
            for k in (5, 10, 15, 20)
        }

    def test_unsupported_config_dropped_and_renormalized(self):
        # 6 training rows cannot populate 20 quantile bins; that member is
        # dropped and the survivor takes all the weight.
        ds = validate_dataset(np.arange(6.0).reshape(6, 1),
                              np.array([1.0, 2, 3, 4, 5, 6]))
        spec = EnsembleSpec.uniform_weights(
            [UNI4, BinningConfig(BinningStrategy.QUANTILE, 20)]
        )
        ens = fit_ensemble(ds, spec, RF, SeededRng(0))
        assert len(ens.members) == 1
        assert ens.members[0].config == UNI4
        assert np.array_equal(ens.weights, [1.0])

    def test_all_configs_degenerate(self):
        ds = validate_dataset(np.arange(6.0).reshape(6, 1),
                              np.array([1.0, 2, 3, 4, 5, 6]))
        spec = EnsembleSpec.uniform_weights(
            [BinningConfig(BinningStrategy.QUANTILE, 20)]
        )
        with pytest.raises(AllConfigsDegenerate):
            fit_ensemble(ds, spec, RF, SeededRng(0))

    def test_batch_matches_single(self):
        ds = make_dataset(n=40)
        ens = fit_ensemble(ds, default_ensemble_spec((4, 6)), RF, SeededRng(1))
        batch = predict_ensemble_batch(ens, ds.features[:5])
        for i in range(5):
            single = predict_ensemble(ens, ds.features[i])
            assert np.array_equal(batch[i].support, single.support)
            assert np.array_equal(batch[i].probs, single.probs)


class TestMixing:
    def test_weighted_mean(self):
        p1 = ProbabilisticPrediction.from_probabilities([1, 3, 5], [0.2, 0.5, 0.3])
        p2 = ProbabilisticPrediction.from_probabilities([1, 3, 5], [0.25, 0.5, 0.25])
        mixed = mix_predictions([p1, p2], [0.5, 0.5])
        assert mixed.mean == pytest.approx(3.1, abs=1e-15)

    def test_idempotent_on_identical_members(self):
        p = ProbabilisticPrediction.from_probabilities([0, 1, 2], [0.2, 0.3, 0.5])
        mixed = mix_predictions([p, p], [0.5, 0.5])
        assert np.array_equal(mixed.support, p.support)
        assert np.array_equal(mixed.probs, p.probs)

    def test_two_point_masses(self):
        p0 = ProbabilisticPrediction.from_probabilities([0.0], [1.0])
        p2 = ProbabilisticPrediction.from_probabilities([2.0], [1.0])
        mixed = mix_predictions([p0, p2], [0.5, 0.5])
        assert mixed.mean == 1.0 and mixed.std == 1.0

    def test_law_of_total_variance(self):
        gen = np.random.default_rng(11)
        for _ in range(20):
            b = int(gen.integers(2, 5))
            preds, weights = [], gen.dirichlet(np.ones(b))
            for _ in range(b):
                k = int(gen.integers(2, 6))
                support = np.sort(gen.uniform(0, 2, k))
                while np.any(np.diff(support) == 0):
                    support = np.sort(gen.uniform(0, 2, k))
                preds.append(ProbabilisticPrediction.from_probabilities(
                    support, gen.dirichlet(np.ones(k))))
            mixed = mix_predictions(preds, weights)
            mu = sum(w * p.mean for w, p in zip(weights, preds))
            var = sum(
                w * (p.std**2 + (p.mean - mu) ** 2)
                for w, p in zip(weights, preds)
            )
            assert mixed.mean == pytest.approx(mu, abs=1e-12)
            assert mixed.std**2 == pytest.approx(var, abs=1e-12)
