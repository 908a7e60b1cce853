"""Shared domain types, dataset container, RNG contract, and error taxonomy."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# Error taxonomy.
#
# Exit-code mapping used by the CLI: ConfigError -> 1, DataError -> 2,
# NumericError -> 3.
# ---------------------------------------------------------------------------

class BinuqError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BinuqError):
    """Invalid configuration, flags, or hyperparameter domains."""


class DataError(BinuqError):
    """Malformed, inconsistent, or insufficient input data."""


class NumericError(BinuqError):
    """Numerical failure during computation."""


class DimensionMismatch(DataError):
    pass


class NonFiniteValue(DataError):
    def __init__(self, row: int, col: int, context: str = "features"):
        self.row = int(row)
        self.col = int(col)
        super().__init__(f"non-finite value in {context} at row {row}, col {col}")


class EmptyDataset(DataError):
    pass


class InvalidDistribution(DataError):
    pass


class DegenerateTarget(DataError):
    pass


class InvalidK(ConfigError):
    pass


class TooFewDistinctValues(DataError):
    pass


class InvalidHyperparameter(ConfigError):
    pass


class AllConfigsDegenerate(NumericError):
    pass


class InvalidLevel(ConfigError):
    pass


class InsufficientCalibration(DataError):
    pass


class MissingLevel(DataError):
    pass


class TooFewSamples(DataError):
    pass


class TooFewPoints(DataError):
    pass


class InsufficientLags(DataError):
    pass


class SingularSystem(NumericError):
    pass


class MissingColumn(DataError):
    pass


class ParseError(DataError):
    def __init__(self, row: int, col: int, message: str = ""):
        self.row = int(row)
        self.col = int(col)
        detail = f": {message}" if message else ""
        super().__init__(f"cannot parse value at row {row}, col {col}{detail}")


class IoError(DataError):
    pass


class VersionMismatch(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class MissingCoordinates(DataError):
    pass


class RowSumViolation(DataError):
    def __init__(self, row: int, total: float):
        self.row = int(row)
        self.total = float(total)
        super().__init__(f"probability row {row} sums to {total:.6g}, expected 1")


class ShapeMismatch(DataError):
    pass


# ---------------------------------------------------------------------------
# Deterministic RNG contract.
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _hash_parts(*parts) -> int:
    """Stable 64-bit hash of a sequence of ints/strings (blake2b-based)."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class SeededRng:
    """A (seed, stream_id) pair identifying one reproducible random stream.

    Identical pairs produce bit-identical sequences regardless of execution
    order, so independent fits may run concurrently with streams derived
    per fold/model.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def derive(self, *parts) -> "SeededRng":
        """Child stream keyed by this stream plus the given parts."""
        return SeededRng(self.seed, _hash_parts(self.stream_id, *parts))

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator; repeated calls restart the same stream."""
        ss = np.random.SeedSequence(
            entropy=self.seed,
            spawn_key=(self.stream_id & 0xFFFFFFFF, self.stream_id >> 32),
        )
        return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# Domain types.
# ---------------------------------------------------------------------------

def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Validated in-memory dataset: features, target, optional coordinates.

    All arrays are finite, float64, and read-only. Features are used as-is;
    no standardization happens here (tree models are scale-faithful, and the
    softmax backend standardizes internally).
    """

    features: np.ndarray
    target: np.ndarray
    coords: Optional[np.ndarray] = None
    feature_names: tuple = ()
    target_name: str = "target"

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Row subset (used by fold machinery); indices are positional."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            features=_readonly(self.features[idx]),
            target=_readonly(self.target[idx]),
            coords=None if self.coords is None else _readonly(self.coords[idx]),
            feature_names=self.feature_names,
            target_name=self.target_name,
        )


def validate_dataset(
    raw_features,
    raw_target,
    raw_coords=None,
    feature_names: Optional[Sequence[str]] = None,
    target_name: str = "target",
) -> Dataset:
    """Validate parsed numeric arrays and build an immutable Dataset.

    Raises
    ------
    EmptyDataset
        n == 0 or d == 0.
    DimensionMismatch
        Row counts of features/target/coords differ, or shapes are wrong.
    NonFiniteValue
        Any NaN/Inf; the first offending (row, col) is reported.
    """
    features = np.array(raw_features, dtype=np.float64, copy=True)
    target = np.array(raw_target, dtype=np.float64, copy=True)

    if features.ndim != 2:
        raise DimensionMismatch(f"features must be 2-D, got ndim={features.ndim}")
    if target.ndim != 1:
        raise DimensionMismatch(f"target must be 1-D, got ndim={target.ndim}")
    n, d = features.shape
    if n == 0 or d == 0:
        raise EmptyDataset(f"dataset has n={n}, d={d}")
    if target.shape[0] != n:
        raise DimensionMismatch(
            f"features have {n} rows but target has length {target.shape[0]}"
        )

    coords = None
    if raw_coords is not None:
        coords = np.array(raw_coords, dtype=np.float64, copy=True)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DimensionMismatch("coords must be an n x 2 matrix")
        if coords.shape[0] != n:
            raise DimensionMismatch(
                f"features have {n} rows but coords have {coords.shape[0]}"
            )

    _check_finite(features, "features")
    _check_finite(target[:, None], "target")
    if coords is not None:
        _check_finite(coords, "coords")

    if feature_names is None:
        names = tuple(f"x{j}" for j in range(d))
    else:
        names = tuple(str(s) for s in feature_names)
        if len(names) != d:
            raise DimensionMismatch(
                f"{len(names)} feature names for {d} feature columns"
            )

    return Dataset(
        features=_readonly(features),
        target=_readonly(target),
        coords=None if coords is None else _readonly(coords),
        feature_names=names,
        target_name=str(target_name),
    )


def _check_finite(matrix: np.ndarray, context: str):
    bad = ~np.isfinite(matrix)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonFiniteValue(row, col, context)


# Classifier backends may return rows whose sum drifts from 1 by floating
# point; drift up to this bound is renormalized, larger drift is an error.
PROB_SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ProbabilisticPrediction:
    """Discrete predictive distribution over an increasing support.

    ``mean`` is the probability-weighted sum of the support points and
    ``std`` the corresponding standard deviation; both are stored exactly
    as derived from (support, probs).
    """

    support: np.ndarray
    probs: np.ndarray
    mean: float
    std: float

    @classmethod
    def from_probabilities(
        cls, support, probs, renormalize: bool = True
    ) -> "ProbabilisticPrediction":
        support = np.asarray(support, dtype=np.float64)
        probs = np.asarray(probs, dtype=np.float64)
        if support.ndim != 1 or probs.ndim != 1 or support.size != probs.size:
            raise DimensionMismatch(
                f"support ({support.shape}) and probs ({probs.shape}) must be "
                "1-D of equal length"
            )
        if support.size == 0:
            raise InvalidDistribution("empty support")
        if np.any(np.diff(support) <= 0):
            raise InvalidDistribution("support must be strictly increasing")
        if np.any(probs < 0):
            raise InvalidDistribution("negative probability")
        total = float(probs.sum())
        if abs(total - 1.0) > PROB_SUM_TOLERANCE:
            raise InvalidDistribution(
                f"probabilities sum to {total:.8g}, beyond renormalization "
                f"tolerance {PROB_SUM_TOLERANCE:g}"
            )
        if renormalize and total != 1.0:
            probs = probs / total
        mean = float(probs @ support)
        var = float(probs @ (support - mean) ** 2)
        std = float(np.sqrt(max(var, 0.0)))
        return cls(
            support=_readonly(support.copy()),
            probs=_readonly(probs.copy()),
            mean=mean,
            std=std,
        )

    def cdf(self, x: float) -> float:
        """Right-continuous step CDF of the discrete distribution."""
        return float(self.probs[self.support <= x].sum())

    def quantile(self, level: float) -> float:
        """Generalized inverse CDF: smallest support value with CDF >= level."""
        if not 0.0 < level < 1.0:
            raise InvalidLevel(f"quantile level must be in (0,1), got {level}")
        cum = np.cumsum(self.probs)
        idx = int(np.searchsorted(cum, level, side="left"))
        return float(self.support[min(idx, self.support.size - 1)])
