import numpy as np
import pytest

from binuq import (
    Dataset,
    ProbabilisticPrediction,
    SeededRng,
    validate_dataset,
)
from binuq.core import (
    DimensionMismatch,
    EmptyDataset,
    InvalidDistribution,
    InvalidLevel,
    NonFiniteValue,
)


class TestValidateDataset:
    def test_well_formed(self):
        ds = validate_dataset([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], [1.0, 2.0, 3.0])
        assert isinstance(ds, Dataset)
        assert ds.n == 3 and ds.d == 2
        assert ds.feature_names == ("x0", "x1")

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            validate_dataset(np.zeros((3, 2)), np.zeros(4))

    def test_nonfinite_reports_position(self):
        X = np.ones((3, 2))
        X[1, 0] = np.nan
        with pytest.raises(NonFiniteValue) as exc:
            validate_dataset(X, np.zeros(3))
        assert exc.value.row == 1 and exc.value.col == 0

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            validate_dataset(np.zeros((0, 2)), np.zeros(0))

    def test_coords_shape_checked(self):
        with pytest.raises(DimensionMismatch):
            validate_dataset(np.zeros((3, 2)), np.zeros(3), raw_coords=np.zeros((3, 3)))
        ds = validate_dataset(np.zeros((3, 2)), np.zeros(3), raw_coords=np.ones((3, 2)))
        assert ds.coords.shape == (3, 2)

    def test_arrays_read_only(self):
        ds = validate_dataset(np.zeros((3, 2)), np.zeros(3))
        with pytest.raises(ValueError):
            ds.features[0, 0] = 1.0
        with pytest.raises(ValueError):
            ds.target[0] = 1.0

    def test_subset(self):
        ds = validate_dataset(np.arange(8.0).reshape(4, 2), np.arange(4.0),
                              raw_coords=np.arange(8.0).reshape(4, 2))
        sub = ds.subset(np.array([2, 0]))
        assert np.array_equal(sub.target, [2.0, 0.0])
        assert np.array_equal(sub.features[0], [4.0, 5.0])
        assert np.array_equal(sub.coords[1], [0.0, 1.0])


class TestSeededRng:
    def test_same_seed_same_stream(self):
        a = SeededRng(7).generator().uniform(size=5)
        b = SeededRng(7).generator().uniform(size=5)
        assert np.array_equal(a, b)

    def test_generator_is_fresh_each_call(self):
        rng = SeededRng(3)
        assert np.array_equal(rng.generator().uniform(size=4),
                              rng.generator().uniform(size=4))

    def test_derived_streams_differ(self):
        rng = SeededRng(0)
        a = rng.derive("fit", 0).generator().uniform(size=4)
        b = rng.derive("fit", 1).generator().uniform(size=4)
        c = rng.derive("refit", 0).generator().uniform(size=4)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_derivation_is_path_dependent_and_stable(self):
        x = SeededRng(1).derive("outer").derive("inner", 2).generator().uniform(size=3)
        y = SeededRng(1).derive("outer").derive("inner", 2).generator().uniform(size=3)
        assert np.array_equal(x, y)


class TestProbabilisticPrediction:
    def test_moments(self):
        p = ProbabilisticPrediction.from_probabilities([1, 3, 5], [0.2, 0.5, 0.3])
        assert p.mean == pytest.approx(3.2, abs=1e-15)
        assert p.std**2 == pytest.approx(1.96, abs=1e-12)

    def test_point_mass(self):
        p = ProbabilisticPrediction.from_probabilities([4.0], [1.0])
        assert p.mean == 4.0 and p.std == 0.0

    def test_renormalizes_small_drift(self):
        drift = np.array([0.5, 0.5]) * (1 + 5e-7)
        p = ProbabilisticPrediction.from_probabilities([0, 1], drift)
        assert p.probs.sum() == pytest.approx(1.0, abs=1e-15)

    def test_rejects_large_drift(self):
        with pytest.raises(InvalidDistribution):
            ProbabilisticPrediction.from_probabilities([0, 1], [0.4, 0.4])

    def test_rejects_negative_and_unsorted(self):
        with pytest.raises(InvalidDistribution):
            ProbabilisticPrediction.from_probabilities([0, 1], [-0.1, 1.1])
        with pytest.raises(InvalidDistribution):
            ProbabilisticPrediction.from_probabilities([1, 1], [0.5, 0.5])

    def test_cdf_and_quantile(self):
        p = ProbabilisticPrediction.from_probabilities([0, 1, 2], [0.25, 0.5, 0.25])
        assert p.cdf(-0.5) == 0.0
        assert p.cdf(0) == 0.25
        assert p.cdf(1) == 0.75
        assert p.cdf(5) == 1.0
        assert p.quantile(0.25) == 0.0
        assert p.quantile(0.5) == 1.0
        assert p.quantile(0.99) == 2.0
        with pytest.raises(InvalidLevel):
            p.quantile(1.0)
