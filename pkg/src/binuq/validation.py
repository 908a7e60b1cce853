"""K x N nested cross-validation with exhaustive grid search.

Outer folds produce held-out test scores; inner folds select
hyperparameters by mean CRPS and contribute one refit model each to the
outer ensemble. Methods that calibrate (conformal, quantile-regression
post-processing) get a seeded carve-out from every inner training cell so
calibration data never leaks into fitting.

Every fit receives its own derived RNG stream keyed by (role, outer,
inner, grid index), so cells are independent and a rerun with the same
seed reproduces the report bit for bit.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import (
    QR_HYPERPARAM_DOMAINS,
    QuantileCurve,
    conformal_predict,
    fit_quantile_regression,
    qr_postprocess_fit,
    qr_predict,
    quantile_level_grid,
    split_conformal_calibrate,
)
from .classifiers import (
    DEFAULT_SOFTMAX_HP,
    RF_HYPERPARAM_DOMAINS,
    ClassifierKind,
    ClassifierSpec,
)
from .core import (
    BinuqError,
    ConfigError,
    Dataset,
    ProbabilisticPrediction,
    SeededRng,
    TooFewSamples,
)
from .ensemble import (
    EnsembleModel,
    EnsembleSpec,
    default_ensemble_spec,
    fit_ensemble,
    mix_predictions,
    predict_ensemble_batch,
)
from .metrics import crps_discrete, crps_from_quantiles


class MethodKind(str, Enum):
    BINNED_ENSEMBLE = "binned_ensemble"
    QR_POSTPROCESS = "qr_postprocess"
    CONFORMAL = "conformal"
    QUANTILE_REGRESSION = "quantile_regression"


# Methods whose fitting stage consumes a held-out calibration set.
CALIBRATED_KINDS = frozenset(
    {MethodKind.QR_POSTPROCESS, MethodKind.CONFORMAL}
)

_QR_DIM_NAMES = frozenset(QR_HYPERPARAM_DOMAINS)


@dataclass(frozen=True)
class HyperparameterGrid:
    """Named dimensions, each a finite ordered list of candidate values."""

    dimensions: Tuple[Tuple[str, Tuple], ...]

    def __post_init__(self):
        if not self.dimensions:
            raise ConfigError("hyperparameter grid must have at least one dimension")
        dims = []
        seen = set()
        for name, values in self.dimensions:
            values = tuple(values)
            if not values:
                raise ConfigError(f"grid dimension {name!r} has no values")
            if name in seen:
                raise ConfigError(f"grid dimension {name!r} repeated")
            seen.add(name)
            dims.append((str(name), values))
        object.__setattr__(self, "dimensions", tuple(dims))

    @classmethod
    def from_mapping(cls, mapping: Dict[str, Sequence]) -> "HyperparameterGrid":
        return cls(tuple((name, tuple(vals)) for name, vals in mapping.items()))

    @property
    def size(self) -> int:
        out = 1
        for _, values in self.dimensions:
            out *= len(values)
        return out


def grid_enumerate(grid: HyperparameterGrid) -> List[dict]:
    """Cartesian product, dimension names in lexicographic order, values in
    their listed order. Position in this list is the tie-break key."""
    dims = sorted(grid.dimensions, key=lambda nv: nv[0])
    names = [name for name, _ in dims]
    return [
        dict(zip(names, combo))
        for combo in itertools.product(*(values for _, values in dims))
    ]


def default_rf_grid() -> HyperparameterGrid:
    return HyperparameterGrid.from_mapping(RF_HYPERPARAM_DOMAINS)


def default_qr_grid() -> HyperparameterGrid:
    return HyperparameterGrid.from_mapping(QR_HYPERPARAM_DOMAINS)


def _classifier_dim_names(cspec: Optional[ClassifierSpec]) -> frozenset:
    if cspec is None:
        return frozenset()
    if cspec.kind is ClassifierKind.RANDOM_FOREST:
        return frozenset(RF_HYPERPARAM_DOMAINS)
    if cspec.kind is ClassifierKind.SOFTMAX:
        return frozenset(DEFAULT_SOFTMAX_HP)
    return frozenset()


@dataclass(frozen=True)
class MethodSpec:
    """What to fit in each cell: method family, backing classifier for the
    binned methods and their point models, bin configurations, and the
    hyperparameter grid searched per inner cell."""

    kind: MethodKind
    grid: HyperparameterGrid
    classifier: Optional[ClassifierSpec] = None
    ensemble: Optional[EnsembleSpec] = None

    def __post_init__(self):
        kind = MethodKind(self.kind)
        object.__setattr__(self, "kind", kind)
        needs_classifier = kind is not MethodKind.QUANTILE_REGRESSION
        if needs_classifier and self.classifier is None:
            raise ConfigError(f"method {kind.value} requires a classifier spec")
        if needs_classifier and self.ensemble is None:
            object.__setattr__(self, "ensemble", default_ensemble_spec())
        allowed = set()
        if needs_classifier:
            allowed |= _classifier_dim_names(self.classifier)
        if kind in (MethodKind.QUANTILE_REGRESSION, MethodKind.QR_POSTPROCESS):
            allowed |= _QR_DIM_NAMES
        for name, _ in self.grid.dimensions:
            if name not in allowed:
                raise ConfigError(
                    f"grid dimension {name!r} is not tunable for method "
                    f"{kind.value}"
                )

    @property
    def needs_calibration(self) -> bool:
        return self.kind in CALIBRATED_KINDS

    @property
    def tag(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class CVPlan:
    outer_k: int = 5
    inner_n: int = 5
    seed: int = 0
    needs_calibration: Optional[bool] = None
    calibration_fraction: float = 0.25

    def __post_init__(self):
        if not (isinstance(self.outer_k, int) and self.outer_k >= 2):
            raise ConfigError("outer_k must be an integer >= 2")
        if not (isinstance(self.inner_n, int) and self.inner_n >= 2):
            raise ConfigError("inner_n must be an integer >= 2")
        if not 0.0 < self.calibration_fraction < 1.0:
            raise ConfigError("calibration_fraction must lie in (0, 1)")


def make_folds(n: int, k: int, rng: SeededRng) -> List[np.ndarray]:
    """Partition 0..n-1 into k folds whose sizes differ by at most one,
    by a seeded uniform shuffle. Indices within each fold come back
    sorted."""
    if n < k:
        raise TooFewSamples(f"cannot split {n} samples into {k} nonempty folds")
    perm = rng.generator().permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


@dataclass(frozen=True)
class CellRecord:
    """Bookkeeping for one (outer, inner) cell."""

    outer: int
    inner: int
    train_indices: np.ndarray
    validation_indices: np.ndarray
    calibration_indices: np.ndarray
    theta_best: dict
    theta_index: int

    def to_dict(self) -> dict:
        return {
            "outer": self.outer,
            "inner": self.inner,
            "train_indices": [int(v) for v in self.train_indices],
            "validation_indices": [int(v) for v in self.validation_indices],
            "calibration_indices": [int(v) for v in self.calibration_indices],
            "theta_best": dict(self.theta_best),
            "theta_index": self.theta_index,
        }


def prediction_payload(pred) -> dict:
    """JSON-ready form of either prediction representation."""
    if isinstance(pred, ProbabilisticPrediction):
        return {
            "kind": "distribution",
            "support": [float(v) for v in pred.support],
            "probabilities": [float(v) for v in pred.probs],
        }
    return {
        "kind": "quantile_curve",
        "levels": [float(v) for v in pred.levels],
        "values": [float(v) for v in pred.values],
    }


@dataclass(eq=False)
class CVReport:
    method_tag: str
    plan: CVPlan
    n_samples: int
    outer_folds: List[np.ndarray]
    cells: List[CellRecord]
    inner_crps: np.ndarray          # (outer_k, inner_n, grid size)
    thetas: List[dict]
    predictions: List               # one per dataset row
    sample_crps: np.ndarray
    fold_crps: np.ndarray
    overall_crps: float
    timing_seconds: float

    def to_dict(self) -> dict:
        # Timing is deliberately left out so identical runs serialize
        # identically.
        return {
            "method": self.method_tag,
            "plan": {
                "outer_k": self.plan.outer_k,
                "inner_n": self.plan.inner_n,
                "seed": self.plan.seed,
                "needs_calibration": self.method_needs_calibration,
                "calibration_fraction": self.plan.calibration_fraction,
            },
            "n_samples": self.n_samples,
            "outer_folds": [[int(v) for v in fold] for fold in self.outer_folds],
            "cells": [cell.to_dict() for cell in self.cells],
            "grid": self.thetas,
            "inner_crps": self.inner_crps.tolist(),
            "predictions": [prediction_payload(p) for p in self.predictions],
            "sample_crps": [float(v) for v in self.sample_crps],
            "fold_crps": [float(v) for v in self.fold_crps],
            "overall_crps": float(self.overall_crps),
        }

    @property
    def method_needs_calibration(self) -> bool:
        return any(cell.calibration_indices.size > 0 for cell in self.cells)


def _attach_cell_context(exc: BinuqError, outer: int, inner: int):
    exc.args = (f"outer fold {outer}, inner fold {inner}: {exc}",)


def _split_theta(theta: dict) -> Tuple[dict, dict]:
    clf = {k: v for k, v in theta.items() if k not in _QR_DIM_NAMES}
    qr = {k: v for k, v in theta.items() if k in _QR_DIM_NAMES}
    return clf, qr


class EnsemblePointModel:
    """Mixture-mean view of a fitted distribution ensemble; the point
    predictor behind the conformal and post-processing baselines."""

    def __init__(self, ensemble: EnsembleModel):
        self.ensemble = ensemble

    def predict(self, features) -> np.ndarray:
        return self.ensemble.predict_mean(features)


def _fit_cell(
    method: MethodSpec,
    theta: dict,
    fit_ds: Dataset,
    cal_ds: Optional[Dataset],
    rng: SeededRng,
):
    clf_part, qr_part = _split_theta(theta)
    if method.kind is MethodKind.QUANTILE_REGRESSION:
        return fit_quantile_regression(fit_ds, quantile_level_grid(), qr_part)
    cspec = replace(
        method.classifier,
        hyperparams={**method.classifier.hyperparams, **clf_part},
    )
    ens = fit_ensemble(fit_ds, method.ensemble, cspec, rng)
    if method.kind is MethodKind.BINNED_ENSEMBLE:
        return ens
    point = EnsemblePointModel(ens)
    if method.kind is MethodKind.CONFORMAL:
        return split_conformal_calibrate(point, cal_ds)
    return qr_postprocess_fit(point, cal_ds, quantile_level_grid(), qr_part)


def _predict_cell(method: MethodSpec, model, features) -> list:
    if method.kind is MethodKind.BINNED_ENSEMBLE:
        return predict_ensemble_batch(model, features)
    if method.kind is MethodKind.QUANTILE_REGRESSION:
        return qr_predict(model, features)
    if method.kind is MethodKind.CONFORMAL:
        return conformal_predict(model, features)
    return model.predict(features)


def _mean_crps(preds: list, targets: np.ndarray) -> float:
    if isinstance(preds[0], ProbabilisticPrediction):
        return float(np.mean([crps_discrete(p, y) for p, y in zip(preds, targets)]))
    return float(
        np.mean([crps_from_quantiles(c, y) for c, y in zip(preds, targets)])
    )


def _aggregate_members(method: MethodSpec, members: list, features) -> list:
    """Equal-weight aggregate of the inner-fold models on one feature block:
    a distribution mixture for the binned method, level-wise quantile
    averaging (then rearrangement) for curve methods."""
    per_member = [_predict_cell(method, m, features) for m in members]
    n_samples = len(per_member[0])
    weights = np.full(len(members), 1.0 / len(members))
    out = []
    if method.kind is MethodKind.BINNED_ENSEMBLE:
        for s in range(n_samples):
            out.append(mix_predictions([pm[s] for pm in per_member], weights))
        return out
    for s in range(n_samples):
        curves = [pm[s] for pm in per_member]
        values = np.mean([c.values for c in curves], axis=0)
        out.append(QuantileCurve(curves[0].levels, values))
    return out


def nested_cv(data: Dataset, method: MethodSpec, plan: CVPlan) -> CVReport:
    """Run the full nested loop and score every sample exactly once.

    Per outer fold i: split the remaining data into inner folds; per inner
    cell (i, j) evaluate every grid point by mean CRPS on the validation
    fold, pick the first argmin, refit on the cell's training portion, and
    collect the refit model. The outer test fold is then scored under the
    equal-weight aggregate of the inner models.
    """
    start = time.perf_counter()
    needs_cal = method.needs_calibration
    if plan.needs_calibration is not None and plan.needs_calibration != needs_cal:
        raise ConfigError(
            f"plan sets needs_calibration={plan.needs_calibration} but method "
            f"{method.tag} {'requires' if needs_cal else 'does not use'} "
            "a calibration split"
        )
    if data.n < 2 * plan.outer_k:
        raise TooFewSamples(
            f"nested cross-validation with outer_k={plan.outer_k} needs at "
            f"least {2 * plan.outer_k} samples, got {data.n}"
        )

    thetas = grid_enumerate(method.grid)
    root = SeededRng(plan.seed)
    outer_folds = make_folds(data.n, plan.outer_k, root.derive("outer"))
    all_idx = np.arange(data.n)

    K, N, T = plan.outer_k, plan.inner_n, len(thetas)
    inner_crps = np.full((K, N, T), np.nan)
    cells: List[CellRecord] = []
    predictions: List = [None] * data.n
    sample_crps = np.full(data.n, np.nan)
    fold_crps = np.zeros(K)

    for i, test_idx in enumerate(outer_folds):
        in_test = np.zeros(data.n, dtype=bool)
        in_test[test_idx] = True
        outer_train_idx = all_idx[~in_test]
        inner_folds = make_folds(outer_train_idx.size, N, root.derive("inner", i))
        members = []
        for j, val_rel in enumerate(inner_folds):
            val_idx = outer_train_idx[val_rel]
            keep = np.ones(outer_train_idx.size, dtype=bool)
            keep[val_rel] = False
            fit_idx = outer_train_idx[keep]
            cal_idx = np.empty(0, dtype=np.int64)
            if needs_cal:
                gen = root.derive("calib", i, j).generator()
                n_cal = max(1, int(fit_idx.size * plan.calibration_fraction + 0.5))
                perm = gen.permutation(fit_idx.size)
                cal_idx = np.sort(fit_idx[perm[:n_cal]])
                fit_idx = np.sort(fit_idx[perm[n_cal:]])
            fit_ds = data.subset(fit_idx)
            cal_ds = data.subset(cal_idx) if needs_cal else None
            val_ds = data.subset(val_idx)

            try:
                for t, theta in enumerate(thetas):
                    model = _fit_cell(
                        method, theta, fit_ds, cal_ds, root.derive("fit", i, j, t)
                    )
                    preds = _predict_cell(method, model, val_ds.features)
                    inner_crps[i, j, t] = _mean_crps(preds, val_ds.target)
                t_best = int(np.argmin(inner_crps[i, j]))
                refit = _fit_cell(
                    method, thetas[t_best], fit_ds, cal_ds, root.derive("refit", i, j)
                )
            except BinuqError as exc:
                _attach_cell_context(exc, i, j)
                raise
            members.append(refit)
            cells.append(
                CellRecord(
                    outer=i,
                    inner=j,
                    train_indices=fit_idx,
                    validation_indices=val_idx,
                    calibration_indices=cal_idx,
                    theta_best=thetas[t_best],
                    theta_index=t_best,
                )
            )

        test_ds = data.subset(test_idx)
        aggregated = _aggregate_members(method, members, test_ds.features)
        for local, idx in enumerate(test_idx):
            predictions[idx] = aggregated[local]
        sample_crps[test_idx] = [
            _mean_crps([aggregated[local]], test_ds.target[local : local + 1])
            for local in range(test_idx.size)
        ]
        fold_crps[i] = float(sample_crps[test_idx].mean())

    assert all(p is not None for p in predictions)
    return CVReport(
        method_tag=method.tag,
        plan=plan,
        n_samples=data.n,
        outer_folds=outer_folds,
        cells=cells,
        inner_crps=inner_crps,
        thetas=thetas,
        predictions=predictions,
        sample_crps=sample_crps,
        fold_crps=fold_crps,
        overall_crps=float(sample_crps.mean()),
        timing_seconds=time.perf_counter() - start,
    )
