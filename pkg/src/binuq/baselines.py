"""Comparison methods emitting quantile curves: one-stage linear quantile
regression, split conformal prediction, and quantile-regression
post-processing of a point model's output.

All three produce a QuantileCurve (nondecreasing values over an increasing
level grid, monotonicity enforced by rearrangement), which the quantile
CRPS path scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil
from typing import List, Optional, Sequence

import numpy as np
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers as cvx_solvers

from .core import (
    Dataset,
    DimensionMismatch,
    InsufficientCalibration,
    InvalidHyperparameter,
    InvalidLevel,
    MissingLevel,
    NumericError,
)

# 19-level grid {0.05, ..., 0.95} shared by every curve-emitting method and
# by the quantile CRPS approximation.
def quantile_level_grid() -> np.ndarray:
    return np.arange(1, 20) / 20.0


# Miscoverage values the conformal model is calibrated at; the implied
# interval endpoints {a/2, 1 - a/2} plus the median reproduce the level
# grid above.
def conformal_miscoverage_grid() -> np.ndarray:
    return np.arange(1, 10) / 10.0


MIN_CALIBRATION_SIZE = 10

QR_HYPERPARAM_DOMAINS = {
    "alpha": (0.1, 0.5, 1.0, 2.0, 5.0, 10.0),
    "fit_intercept": (True, False),
}
DEFAULT_QR_HP = {"alpha": 1.0, "fit_intercept": True}


@dataclass(frozen=True)
class QuantileCurve:
    """Nondecreasing quantile-level -> value map.

    Values are rearranged (sorted) at construction, so any curve observed
    downstream is monotone regardless of how the per-level predictions
    came out.
    """

    levels: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if levels.ndim != 1 or levels.shape != values.shape or levels.size == 0:
            raise DimensionMismatch("levels and values must be equal-length 1-D")
        if np.any(levels <= 0) or np.any(levels >= 1):
            raise InvalidLevel("levels must lie strictly inside (0, 1)")
        if np.any(np.diff(levels) <= 0):
            raise InvalidLevel("levels must be strictly increasing")
        values = np.sort(values)
        levels = levels.copy()
        levels.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "values", values)

    def value_at(self, level: float) -> float:
        idx = np.nonzero(np.abs(self.levels - level) <= 1e-12)[0]
        if idx.size == 0:
            raise MissingLevel(f"level {level} not present in curve")
        return float(self.values[idx[0]])


def _validate_levels(levels) -> np.ndarray:
    levels = np.asarray(levels, dtype=np.float64).ravel()
    if levels.size == 0 or np.any(levels <= 0) or np.any(levels >= 1):
        raise InvalidLevel("quantile levels must lie strictly inside (0, 1)")
    return levels


def _validate_qr_hp(hp: Optional[dict]) -> dict:
    merged = dict(DEFAULT_QR_HP)
    if hp:
        for key, value in hp.items():
            domain = QR_HYPERPARAM_DOMAINS.get(key)
            if domain is None:
                raise InvalidHyperparameter(
                    f"unknown quantile-regression parameter {key!r}"
                )
            if not any(value == allowed for allowed in domain):
                raise InvalidHyperparameter(
                    f"{key}={value!r} is outside the allowed set {domain}"
                )
        merged.update(hp)
    return merged


def pinball_objective(X, y, w, b, tau: float, alpha: float) -> float:
    """Mean pinball loss plus (alpha/n) * ||w||^2.

    The penalty is scaled by 1/n so that `alpha` weighs against the summed
    loss; with this scaling an exact linear relation is recovered with
    coefficients essentially unshrunk at the grid's alpha values.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    r = y - X @ np.asarray(w) - b
    loss = np.where(r >= 0, tau * r, (tau - 1.0) * r).mean()
    return float(loss + alpha / n * float(np.dot(w, w)))


def fit_pinball(X, y, tau: float, alpha: float, fit_intercept: bool = True):
    """Linear pinball-loss fit via the equivalent quadratic program.

    Returns (w, b). The QP splits residuals into positive/negative parts;
    an interior-point solve at tight tolerances meets the 1e-8 objective
    contract on desk-scale problems.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, d = X.shape
    if y.size != n:
        raise DimensionMismatch("X and y disagree on sample count")
    if not 0.0 < tau < 1.0:
        raise InvalidLevel(f"quantile level must be in (0,1), got {tau}")

    p = 1 if fit_intercept else 0
    nv = d + p + 2 * n

    P = np.zeros((nv, nv))
    P[:d, :d] = (2.0 * alpha / n) * np.eye(d)
    if d == 0 and p == 1:
        # Intercept-only: keep the KKT system full rank with a negligible
        # curvature term (objective shift ~1e-12 * b^2).
        P[d, d] = 2e-12
    q = np.concatenate(
        [np.zeros(d + p), np.full(n, tau / n), np.full(n, (1.0 - tau) / n)]
    )
    G = np.zeros((2 * n, nv))
    G[:n, d + p : d + p + n] = -np.eye(n)
    G[n:, d + p + n :] = -np.eye(n)
    h = np.zeros(2 * n)
    blocks = [X]
    if fit_intercept:
        blocks.append(np.ones((n, 1)))
    blocks.extend([np.eye(n), -np.eye(n)])
    A = np.hstack(blocks)

    options = {
        "show_progress": False,
        "abstol": 1e-10,
        "reltol": 1e-10,
        "feastol": 1e-10,
        "maxiters": 200,
    }
    saved = dict(cvx_solvers.options)
    cvx_solvers.options.update(options)
    try:
        sol = cvx_solvers.qp(
            cvx_matrix(P), cvx_matrix(q), cvx_matrix(G), cvx_matrix(h),
            cvx_matrix(A), cvx_matrix(y),
        )
    finally:
        cvx_solvers.options.clear()
        cvx_solvers.options.update(saved)
    if sol["status"] not in ("optimal", "unknown"):
        raise NumericError(f"pinball QP failed with status {sol['status']}")
    x = np.asarray(sol["x"]).ravel()
    w = x[:d]
    b = float(x[d]) if fit_intercept else 0.0
    return w, b


class QuantileRegressionModel:
    """Per-level linear pinball fits sharing one hyperparameter setting."""

    def __init__(self, levels, coefs, intercepts, hyperparams, n_features):
        self.levels = np.asarray(levels, dtype=np.float64)
        self.coefs = np.asarray(coefs, dtype=np.float64)        # (L, d)
        self.intercepts = np.asarray(intercepts, dtype=np.float64)
        self.hyperparams = dict(hyperparams)
        self.n_features = int(n_features)

    def predict(self, features) -> List[QuantileCurve]:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"expected {self.n_features} feature columns, got {X.shape[1]}"
            )
        raw = X @ self.coefs.T + self.intercepts  # (m, L)
        return [QuantileCurve(self.levels, row) for row in raw]


def fit_quantile_regression(
    train: Dataset, levels=None, hp: Optional[dict] = None
) -> QuantileRegressionModel:
    """One-stage baseline: an independent pinball fit per quantile level."""
    levels = quantile_level_grid() if levels is None else _validate_levels(levels)
    merged = _validate_qr_hp(hp)
    coefs, intercepts = [], []
    for tau in levels:
        w, b = fit_pinball(
            train.features, train.target, float(tau),
            merged["alpha"], merged["fit_intercept"],
        )
        coefs.append(w)
        intercepts.append(b)
    return QuantileRegressionModel(levels, coefs, intercepts, merged, train.d)


def qr_predict(model: QuantileRegressionModel, features) -> List[QuantileCurve]:
    return model.predict(features)


# ---------------------------------------------------------------------------
# Split conformal prediction.
# ---------------------------------------------------------------------------

def conformal_rank(n_cal: int, miscoverage: float) -> int:
    """1-based order statistic defining the conformal quantile."""
    return ceil((n_cal + 1) * (1.0 - miscoverage))


@dataclass(frozen=True)
class ConformalModel:
    """Point model plus sorted absolute calibration residuals."""

    point_model: object
    scores: np.ndarray
    miscoverage: np.ndarray
    half_widths: np.ndarray

    def half_width(self, miscoverage: float) -> float:
        idx = np.nonzero(np.abs(self.miscoverage - miscoverage) <= 1e-12)[0]
        if idx.size == 0:
            raise MissingLevel(f"model not calibrated at miscoverage {miscoverage}")
        return float(self.half_widths[idx[0]])


def split_conformal_calibrate(
    point_model, calib: Dataset, miscoverage_levels=None
) -> ConformalModel:
    """Store sorted |y - point(x)| scores and the per-level score quantiles.

    For miscoverage a the half-width is the ceil((n+1)(1-a))-th smallest
    score; a rank beyond the calibration size raises
    InsufficientCalibration.
    """
    if miscoverage_levels is None:
        miscoverage_levels = conformal_miscoverage_grid()
    miscoverage = _validate_levels(miscoverage_levels)
    preds = np.asarray(point_model.predict(calib.features), dtype=np.float64).ravel()
    if preds.size != calib.n:
        raise DimensionMismatch("point model returned wrong number of predictions")
    scores = np.sort(np.abs(calib.target - preds))
    n_cal = scores.size
    half_widths = []
    for a in miscoverage:
        rank = conformal_rank(n_cal, float(a))
        if rank > n_cal:
            raise InsufficientCalibration(
                f"miscoverage {a:g} needs rank {rank} but only {n_cal} "
                "calibration scores are available"
            )
        half_widths.append(float(scores[rank - 1]))
    return ConformalModel(
        point_model=point_model,
        scores=scores,
        miscoverage=miscoverage,
        half_widths=np.asarray(half_widths),
    )


def conformal_predict(model: ConformalModel, features) -> List[QuantileCurve]:
    """Symmetric nested intervals turned into a quantile curve.

    Each miscoverage a contributes levels a/2 and 1 - a/2 at
    point +- half_width(a); the point prediction sits at level 0.5.
    """
    preds = np.asarray(model.point_model.predict(features), dtype=np.float64).ravel()
    half = model.half_widths
    a = model.miscoverage
    levels = np.concatenate([a / 2.0, [0.5], 1.0 - a[::-1] / 2.0])
    curves = []
    for yhat in preds:
        values = np.concatenate([yhat - half, [yhat], yhat + half[::-1]])
        curves.append(QuantileCurve(levels, values))
    return curves


# ---------------------------------------------------------------------------
# Quantile-regression post-processing of a point model.
# ---------------------------------------------------------------------------

class QrPostprocessModel:
    """Per-level 1-D quantile regressions of y on the point prediction."""

    def __init__(self, point_model, qr: QuantileRegressionModel):
        self.point_model = point_model
        self.qr = qr

    def predict(self, features) -> List[QuantileCurve]:
        base = np.asarray(self.point_model.predict(features), dtype=np.float64)
        return self.qr.predict(base.reshape(-1, 1))


def qr_postprocess_fit(
    base_point_model,
    calib: Dataset,
    levels=None,
    hp: Optional[dict] = None,
) -> QrPostprocessModel:
    """Fit the per-level calibration curves on a held-out calibration set.

    The calibration set must be disjoint from the base model's training
    data (the cross-validation harness enforces the split) and contain at
    least MIN_CALIBRATION_SIZE points.
    """
    if calib.n < MIN_CALIBRATION_SIZE:
        raise InsufficientCalibration(
            f"quantile-regression post-processing needs at least "
            f"{MIN_CALIBRATION_SIZE} calibration points, got {calib.n}"
        )
    levels = quantile_level_grid() if levels is None else _validate_levels(levels)
    merged = _validate_qr_hp(hp)
    merged["fit_intercept"] = True
    base = np.asarray(
        base_point_model.predict(calib.features), dtype=np.float64
    ).reshape(-1, 1)
    coefs, intercepts = [], []
    for tau in levels:
        w, b = fit_pinball(base, calib.target, float(tau), merged["alpha"], True)
        coefs.append(w)
        intercepts.append(b)
    qr = QuantileRegressionModel(levels, coefs, intercepts, merged, 1)
    return QrPostprocessModel(base_point_model, qr)
