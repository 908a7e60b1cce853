import numpy as np
import pytest

from binuq import NoiseKind, SynthSpec, generate
from binuq.core import ConfigError
from binuq.synth import heteroscedastic_noise_sd, mean_function


class TestSpec:
    def test_minimum_size(self):
        with pytest.raises(ConfigError):
            SynthSpec(n=5, d=2)

    def test_dimension_and_sigma_checks(self):
        with pytest.raises(ConfigError):
            SynthSpec(n=20, d=0)
        with pytest.raises(ConfigError):
            SynthSpec(n=20, d=1, sigma=-0.1)


class TestGenerate:
    def test_zero_noise_is_exact(self):
        ds = generate(SynthSpec(n=100, d=2, noise=NoiseKind.HOMOSCEDASTIC,
                                sigma=0.0, seed=1))
        assert np.array_equal(ds.target, mean_function(ds.features))

    def test_heteroscedastic_noise_grows_with_x1(self):
        ds = generate(SynthSpec(n=10_000, d=2, seed=1))
        resid = ds.target - mean_function(ds.features)
        low = resid[ds.features[:, 0] <= 0.1]
        high = resid[ds.features[:, 0] >= 0.9]
        assert high.std() / low.std() > 3.0

    def test_deterministic(self):
        a = generate(SynthSpec(n=60, d=3, seed=9))
        b = generate(SynthSpec(n=60, d=3, seed=9))
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.target, b.target)

    def test_spatial_layout(self):
        ds = generate(SynthSpec(n=80, d=2, spatial=True, seed=4))
        assert ds.coords is not None and ds.coords.shape == (80, 2)
        assert np.all(ds.coords >= -15.0) and np.all(ds.coords <= 115.0)
        assert np.array_equal(ds.features[:, :2], ds.coords / 100.0)

    def test_noise_law(self):
        assert np.allclose(heteroscedastic_noise_sd([0.0, 1.0]), [0.1, 1.0],
                           atol=0)

    def test_mean_function_univariate_drops_interaction(self):
        X = np.array([[0.25], [0.5]])
        assert np.allclose(mean_function(X), 3.0 * X[:, 0], atol=0)
