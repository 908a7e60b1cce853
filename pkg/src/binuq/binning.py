"""Target discretization: uniform and quantile bin construction and lookup.

Bin edges always span [min(y), max(y)] of the training values. Labels are
1-based; a value equal to the lowest edge belongs to bin 1, and values
outside the training range clamp to the nearest extreme bin so evaluation
stays total on unseen folds.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import DegenerateTarget, InvalidK, TooFewDistinctValues, _readonly


class BinningStrategy(str, Enum):
    UNIFORM = "uniform"
    QUANTILE = "quantile"


@dataclass(frozen=True)
class BinningConfig:
    strategy: BinningStrategy
    k: int

    def __post_init__(self):
        object.__setattr__(self, "strategy", BinningStrategy(self.strategy))
        object.__setattr__(self, "k", int(self.k))
        if self.k < 2:
            raise InvalidK(f"k must be >= 2, got {self.k}")


@dataclass(frozen=True)
class BinStructure:
    """Strictly increasing edges plus midpoints; effective_k bins.

    effective_k can be below the requested k when degenerate quantile edges
    were merged.
    """

    edges: np.ndarray
    midpoints: np.ndarray
    strategy: BinningStrategy
    effective_k: int

    @classmethod
    def from_edges(cls, edges: np.ndarray, strategy: BinningStrategy) -> "BinStructure":
        edges = np.asarray(edges, dtype=np.float64)
        if np.any(np.diff(edges) <= 0):
            raise DegenerateTarget("bin edges are not strictly increasing")
        midpoints = (edges[:-1] + edges[1:]) / 2.0
        return cls(
            edges=_readonly(edges.copy()),
            midpoints=_readonly(midpoints),
            strategy=BinningStrategy(strategy),
            effective_k=len(edges) - 1,
        )


def _as_target(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise DegenerateTarget("empty target vector")
    return y


def uniform_edges(y, k: int) -> BinStructure:
    """Equal-width bins over [min(y), max(y)].

    Edge i sits at y_min + i * (y_max - y_min) / k; empty bins are kept as
    classes. Raises DegenerateTarget when max(y) == min(y) and InvalidK for
    k < 2.
    """
    y = _as_target(y)
    if k < 2:
        raise InvalidK(f"k must be >= 2, got {k}")
    lo, hi = float(np.min(y)), float(np.max(y))
    if hi <= lo:
        raise DegenerateTarget(f"target is constant at {lo}")
    edges = np.linspace(lo, hi, int(k) + 1)
    return BinStructure.from_edges(edges, BinningStrategy.UNIFORM)


def quantile_edges(y, k: int) -> BinStructure:
    """Bins at empirical quantiles Q(i/k) so occupancy is near-uniform.

    Quantiles use linear interpolation between order statistics (position
    h = (n-1)p on the sorted sample). Consecutive duplicate edges, which
    arise from heavy ties, are merged with effective_k reduced accordingly.

    Raises TooFewDistinctValues when n < k or when merging leaves fewer
    than 2 bins.
    """
    y = _as_target(y)
    if k < 2:
        raise InvalidK(f"k must be >= 2, got {k}")
    lo, hi = float(np.min(y)), float(np.max(y))
    if hi <= lo:
        raise DegenerateTarget(f"target is constant at {lo}")
    if y.size < k:
        raise TooFewDistinctValues(
            f"{y.size} training values cannot populate {k} quantile bins"
        )
    probs = np.arange(int(k) + 1) / float(k)
    edges = np.quantile(y, probs, method="linear")
    # Merge consecutive duplicates (exact ties in the order statistics).
    keep = np.concatenate(([True], np.diff(edges) > 0))
    edges = edges[keep]
    if len(edges) < 3:
        raise TooFewDistinctValues(
            f"quantile edges collapse to {len(edges) - 1} bin(s) after merging"
        )
    return BinStructure.from_edges(edges, BinningStrategy.QUANTILE)


def build_bins(y, config: BinningConfig) -> BinStructure:
    if config.strategy is BinningStrategy.UNIFORM:
        return uniform_edges(y, config.k)
    return quantile_edges(y, config.k)


def assign_bins(y, bins: BinStructure) -> np.ndarray:
    """Map values to 1-based bin labels.

    Label j satisfies edges[j-1] < y <= edges[j]; y == edges[0] maps to
    label 1 and out-of-range values clamp to the nearest extreme bin.
    """
    y = np.asarray(y, dtype=np.float64)
    labels = np.searchsorted(bins.edges, y, side="left")
    return np.clip(labels, 1, bins.effective_k).astype(np.int64)
