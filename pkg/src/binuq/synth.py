"""Seeded synthetic regression data used by the test suite and CLI.

The mean function is 3*x1 + sin(4*pi*x1)*x2, nonlinear enough that bin
resolution matters, with either fixed-sd noise or noise whose sd grows
linearly in x1 so predicted spreads have a ground truth to correlate
against. The spatial variant lays samples on a jittered grid over a
100 m x 100 m square and feeds the normalized coordinates in as the first
features, which gives the target real spatial structure for kriging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import ConfigError, Dataset, SeededRng, validate_dataset

FIELD_SIZE = 100.0  # metres per side of the spatial square


class NoiseKind(str, Enum):
    HOMOSCEDASTIC = "homoscedastic"
    HETEROSCEDASTIC = "heteroscedastic"


@dataclass(frozen=True)
class SynthSpec:
    n: int
    d: int
    noise: NoiseKind = NoiseKind.HETEROSCEDASTIC
    sigma: float = 0.1
    spatial: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "noise", NoiseKind(self.noise))
        if not (isinstance(self.n, int) and self.n >= 10):
            raise ConfigError("synthetic datasets need n >= 10")
        if not (isinstance(self.d, int) and self.d >= 1):
            raise ConfigError("synthetic datasets need d >= 1")
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError("sigma must be finite and >= 0")


def mean_function(features: np.ndarray) -> np.ndarray:
    """3*x1 + sin(4*pi*x1)*x2; the x2 term drops out when d == 1."""
    x1 = features[:, 0]
    out = 3.0 * x1
    if features.shape[1] >= 2:
        out = out + np.sin(4.0 * math.pi * x1) * features[:, 1]
    return out


def heteroscedastic_noise_sd(x1) -> np.ndarray:
    return 0.1 + 0.9 * np.asarray(x1, dtype=np.float64)


def _jittered_grid_coords(n: int, gen: np.random.Generator) -> np.ndarray:
    """First n cells of a g x g grid over the square, each jittered
    uniformly within 60% of its cell."""
    g = math.ceil(math.sqrt(n))
    cell = FIELD_SIZE / g
    rows, cols = np.divmod(np.arange(n), g)
    centers = np.column_stack([(cols + 0.5) * cell, (rows + 0.5) * cell])
    jitter = gen.uniform(-0.3, 0.3, (n, 2)) * cell
    return centers + jitter


def generate(spec: SynthSpec) -> Dataset:
    root = SeededRng(spec.seed)
    features = root.derive("features").generator().uniform(0, 1, (spec.n, spec.d))
    coords = None
    if spec.spatial:
        coords = _jittered_grid_coords(spec.n, root.derive("coords").generator())
        k = min(spec.d, 2)
        features[:, :k] = coords[:, :k] / FIELD_SIZE
    f = mean_function(features)
    eps = root.derive("noise").generator().standard_normal(spec.n)
    if spec.noise is NoiseKind.HOMOSCEDASTIC:
        y = f + eps * spec.sigma
    else:
        y = f + eps * heteroscedastic_noise_sd(features[:, 0])
    names = [f"x{i + 1}" for i in range(spec.d)]
    return validate_dataset(features, y, raw_coords=coords, feature_names=names)
