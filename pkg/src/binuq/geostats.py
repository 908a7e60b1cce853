"""Ordinary kriging onto regular grids, with empirical semivariogram
estimation and weighted-least-squares variogram fitting.

Conventions: grid origin is the lower-left corner (raster row 0 is the top
row), gamma(0) == 0 even with a positive nugget, and the exponential and
gaussian families use effective-range forms so range_param is the distance
where the model reaches ~95% of its sill.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist, squareform

from .core import (
    ConfigError,
    DimensionMismatch,
    InsufficientLags,
    NonFiniteValue,
    TooFewPoints,
)

DEFAULT_MAX_NEIGHBORS = 32
CONDITION_LIMIT = 1e12


class VariogramFamily(str, Enum):
    SPHERICAL = "spherical"
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class Variogram:
    family: VariogramFamily
    nugget: float
    partial_sill: float
    range_param: float

    def __post_init__(self):
        object.__setattr__(self, "family", VariogramFamily(self.family))
        if not (np.isfinite(self.nugget) and self.nugget >= 0):
            raise ConfigError("nugget must be finite and >= 0")
        if not (np.isfinite(self.partial_sill) and self.partial_sill >= 0):
            raise ConfigError("partial_sill must be finite and >= 0")
        if not (np.isfinite(self.range_param) and self.range_param > 0):
            raise ConfigError("range_param must be finite and > 0")

    @property
    def sill(self) -> float:
        return self.nugget + self.partial_sill

    def gamma(self, h) -> np.ndarray:
        """Semivariance at separation distance(s) h; exactly 0 at h == 0."""
        h = np.asarray(h, dtype=np.float64)
        hr = h / self.range_param
        if self.family is VariogramFamily.SPHERICAL:
            shape = np.where(hr >= 1.0, 1.0, 1.5 * hr - 0.5 * hr**3)
        elif self.family is VariogramFamily.EXPONENTIAL:
            shape = 1.0 - np.exp(-3.0 * hr)
        else:
            shape = 1.0 - np.exp(-3.0 * hr**2)
        out = np.where(h > 0, self.nugget + self.partial_sill * shape, 0.0)
        return out if out.shape else float(out)


@dataclass
class RasterGrid:
    """Regular grid of cell values; x_origin/y_origin is the lower-left
    corner and values[0] is the northernmost (top) row."""

    x_origin: float
    y_origin: float
    cell_size: float
    n_rows: int
    n_cols: int
    values: Optional[np.ndarray] = None
    nodata: float = -9999.0

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ConfigError("cell_size must be > 0")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ConfigError("grid must have at least one row and column")
        if self.values is None:
            self.values = np.full((self.n_rows, self.n_cols), self.nodata)
        else:
            self.values = np.asarray(self.values, dtype=np.float64)
            if self.values.shape != (self.n_rows, self.n_cols):
                raise DimensionMismatch(
                    f"values shape {self.values.shape} does not match "
                    f"{self.n_rows}x{self.n_cols}"
                )

    def cell_centers(self) -> np.ndarray:
        """(n_rows*n_cols, 2) array of (x, y) centers in row-major order."""
        cols = np.arange(self.n_cols)
        rows = np.arange(self.n_rows)
        xs = self.x_origin + (cols + 0.5) * self.cell_size
        ys = self.y_origin + (self.n_rows - rows - 0.5) * self.cell_size
        xx, yy = np.meshgrid(xs, ys)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def like(self, values: np.ndarray) -> "RasterGrid":
        return RasterGrid(
            x_origin=self.x_origin,
            y_origin=self.y_origin,
            cell_size=self.cell_size,
            n_rows=self.n_rows,
            n_cols=self.n_cols,
            values=values,
            nodata=self.nodata,
        )


def _check_coords_values(coords, values) -> Tuple[np.ndarray, np.ndarray]:
    coords = np.asarray(coords, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64).ravel()
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DimensionMismatch("coords must be an n x 2 array")
    if coords.shape[0] != values.size:
        raise DimensionMismatch("coords and values disagree on sample count")
    if not np.all(np.isfinite(coords)):
        bad = np.argwhere(~np.isfinite(coords))[0]
        raise NonFiniteValue(int(bad[0]), int(bad[1]), context="coordinates")
    if not np.all(np.isfinite(values)):
        row = int(np.nonzero(~np.isfinite(values))[0][0])
        raise NonFiniteValue(row, 0, context="values")
    return coords, values


def empirical_semivariogram(
    coords, values, n_lags: int, max_dist: float
) -> List[Tuple[float, float, int]]:
    """Matheron estimator, bucketed into n_lags equal-width distance bins
    on (0, max_dist]. Returns (lag_center, gamma, pair_count) for nonempty
    bins; coincident points contribute no pair and trigger a warning."""
    coords, values = _check_coords_values(coords, values)
    if coords.shape[0] < 2:
        raise TooFewPoints("semivariogram estimation needs at least 2 points")
    if n_lags < 1:
        raise ConfigError("n_lags must be >= 1")
    if not max_dist > 0:
        raise ConfigError("max_dist must be > 0")
    dist = pdist(coords)
    diff2 = pdist(values.reshape(-1, 1), metric="sqeuclidean")
    n_zero = int(np.count_nonzero(dist == 0))
    if n_zero:
        warnings.warn(
            f"{n_zero} coincident point pair(s) ignored in the semivariogram",
            stacklevel=2,
        )
    keep = (dist > 0) & (dist <= max_dist)
    dist = dist[keep]
    diff2 = diff2[keep]
    width = max_dist / n_lags
    # right-inclusive bins ((k-1)*w, k*w]
    bin_idx = np.minimum(np.ceil(dist / width).astype(int) - 1, n_lags - 1)
    out = []
    counts = np.bincount(bin_idx, minlength=n_lags)
    sums = np.bincount(bin_idx, weights=diff2, minlength=n_lags)
    for lag in range(n_lags):
        if counts[lag] == 0:
            continue
        gamma = 0.5 * sums[lag] / counts[lag]
        out.append(((lag + 0.5) * width, float(gamma), int(counts[lag])))
    return out


def _wls_objective(params, family, h, gamma_hat, weights):
    vg = Variogram(family, params[0], params[1], params[2])
    resid = vg.gamma(h) - gamma_hat
    return float(np.sum(weights * resid**2))


def fit_variogram(
    empirical: Sequence[Tuple[float, float, int]],
    family: VariogramFamily = VariogramFamily.SPHERICAL,
    variance: Optional[float] = None,
    max_dist: Optional[float] = None,
) -> Variogram:
    """Weighted least squares with weights pair_count / lag_center^2.

    The search box is nugget in [0, s2], partial sill in [0, 2*s2], range
    in (0, 2*max_dist]; s2 defaults to the largest empirical semivariance
    when no sample variance is supplied, and max_dist to the largest lag
    center. A small multi-start sweep guards against local minima.
    """
    family = VariogramFamily(family)
    empirical = list(empirical)
    if len(empirical) < 3:
        raise InsufficientLags(
            f"variogram fitting needs at least 3 nonempty lags, got "
            f"{len(empirical)}"
        )
    h = np.asarray([e[0] for e in empirical], dtype=np.float64)
    gamma_hat = np.asarray([e[1] for e in empirical], dtype=np.float64)
    counts = np.asarray([e[2] for e in empirical], dtype=np.float64)
    if np.any(h <= 0) or np.any(counts < 1):
        raise ConfigError("empirical lags must have positive distance and count")
    weights = counts / h**2

    s2 = float(variance) if variance is not None else float(gamma_hat.max())
    if not s2 > 0:
        s2 = 1.0
    h_max = float(max_dist) if max_dist is not None else float(h.max())
    range_hi = 2.0 * h_max
    range_lo = 1e-9 * range_hi
    bounds = [(0.0, s2), (0.0, 2.0 * s2), (range_lo, range_hi)]

    best = None
    for ng0 in (0.0, 0.25 * s2):
        for ps0 in (0.5 * s2, s2):
            for r0 in (0.2 * h_max, 0.5 * h_max, h_max):
                res = minimize(
                    _wls_objective,
                    x0=np.array([ng0, ps0, r0]),
                    args=(family, h, gamma_hat, weights),
                    method="L-BFGS-B",
                    bounds=bounds,
                    options={"ftol": 1e-14, "gtol": 1e-12, "maxiter": 500},
                )
                if best is None or res.fun < best.fun:
                    best = res
    ng, ps, rg = best.x
    return Variogram(family, float(ng), float(ps), float(max(rg, range_lo)))


def average_duplicates(coords, values) -> Tuple[np.ndarray, np.ndarray]:
    """Collapse exactly coincident sample locations to their mean value."""
    coords, values = _check_coords_values(coords, values)
    uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
    if uniq.shape[0] == coords.shape[0]:
        return coords, values
    sums = np.bincount(inverse, weights=values, minlength=uniq.shape[0])
    counts = np.bincount(inverse, minlength=uniq.shape[0])
    return uniq, sums / counts


def ordinary_krige(
    coords,
    values,
    vg: Variogram,
    grid: RasterGrid,
    max_neighbors: int = DEFAULT_MAX_NEIGHBORS,
) -> Tuple[RasterGrid, RasterGrid]:
    """Solve the ordinary-kriging system per cell over the nearest
    max_neighbors samples.

    Returns (prediction grid, kriging-variance grid). Cells whose system
    is numerically singular (condition estimate above 1e12) are set to the
    grid's nodata value and counted in a warning.
    """
    coords, values = _check_coords_values(coords, values)
    coords, values = average_duplicates(coords, values)
    n = coords.shape[0]
    if n < 2:
        raise TooFewPoints("kriging needs at least 2 distinct sample points")
    if max_neighbors < 1:
        raise ConfigError("max_neighbors must be >= 1")

    m = min(max_neighbors, n)
    centers = grid.cell_centers()
    tree = cKDTree(coords)
    center_dist, neighbor_idx = tree.query(centers, k=m)
    center_dist = np.atleast_2d(center_dist.reshape(centers.shape[0], m))
    neighbor_idx = np.atleast_2d(neighbor_idx.reshape(centers.shape[0], m))

    pred = np.full(centers.shape[0], grid.nodata)
    krig_var = np.full(centers.shape[0], grid.nodata)
    n_singular = 0
    ones_col = np.ones(m)
    for c in range(centers.shape[0]):
        idx = neighbor_idx[c]
        pts = coords[idx]
        pair_d = squareform(pdist(pts))
        a = np.empty((m + 1, m + 1))
        a[:m, :m] = vg.gamma(pair_d)
        a[:m, m] = ones_col
        a[m, :m] = ones_col
        a[m, m] = 0.0
        rhs = np.empty(m + 1)
        rhs[:m] = vg.gamma(center_dist[c])
        rhs[m] = 1.0
        try:
            cond = np.linalg.cond(a, 1)
        except np.linalg.LinAlgError:
            cond = np.inf
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            n_singular += 1
            continue
        sol = np.linalg.solve(a, rhs)
        w = sol[:m]
        pred[c] = w @ values[idx]
        krig_var[c] = w @ rhs[:m] + sol[m]

    if n_singular:
        warnings.warn(
            f"singular kriging system at {n_singular} cell(s); set to nodata",
            stacklevel=2,
        )
    shape = (grid.n_rows, grid.n_cols)
    return grid.like(pred.reshape(shape)), grid.like(krig_var.reshape(shape))
