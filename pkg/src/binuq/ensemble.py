"""Regression-as-classification adapter and its bin-configuration ensemble.

The adapter discretizes the training target into bins, fits a probabilistic
classifier on the bin labels, and reads predictions back as a discrete
distribution over bin midpoints: the prediction mean is the
probability-weighted midpoint sum and the standard deviation of that
distribution is the model-uncertainty proxy.

The ensemble trains one adapter per bin configuration and mixes the member
distributions with fixed weights, which removes the need to pick a single
bin count or strategy. The mixture is itself a discrete distribution (atoms
at all members' midpoints, masses weight * member probability), so its
moments and CRPS stay in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .binning import BinningConfig, BinningStrategy, BinStructure, assign_bins, build_bins
from .classifiers import ClassifierSpec, fit_classifier
from .core import (
    AllConfigsDegenerate,
    Dataset,
    DimensionMismatch,
    ProbabilisticPrediction,
    SeededRng,
    TooFewDistinctValues,
)

DEFAULT_BIN_COUNTS = (5, 10, 15, 20)


@dataclass(frozen=True)
class EnsembleSpec:
    """Bin configurations plus mixture weights (nonnegative, sum 1)."""

    configs: tuple
    weights: np.ndarray

    def __post_init__(self):
        configs = tuple(self.configs)
        if len(configs) < 1:
            raise AllConfigsDegenerate("ensemble requires at least one configuration")
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (len(configs),):
            raise DimensionMismatch("one weight per bin configuration required")
        if np.any(weights < 0) or abs(float(weights.sum()) - 1.0) > 1e-12:
            raise DimensionMismatch("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "configs", configs)
        weights = weights.copy()
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform_weights(cls, configs: Sequence[BinningConfig]) -> "EnsembleSpec":
        configs = tuple(configs)
        b = len(configs)
        return cls(configs=configs, weights=np.full(b, 1.0 / b))


def default_ensemble_spec(bin_counts: Sequence[int] = DEFAULT_BIN_COUNTS) -> EnsembleSpec:
    """Both strategies crossed with the default bin counts, equal weights."""
    configs = [
        BinningConfig(strategy, k)
        for strategy in (BinningStrategy.UNIFORM, BinningStrategy.QUANTILE)
        for k in bin_counts
    ]
    return EnsembleSpec.uniform_weights(configs)


@dataclass(frozen=True)
class BinnedAdapterModel:
    """One bin structure plus the classifier fitted on its labels."""

    bins: BinStructure
    classifier: object
    config: BinningConfig

    def __post_init__(self):
        if self.classifier.n_classes != self.bins.effective_k:
            raise DimensionMismatch(
                f"classifier has {self.classifier.n_classes} classes but the bin "
                f"structure has {self.bins.effective_k}"
            )


def fit_binned_adapter(
    train: Dataset,
    config: BinningConfig,
    spec: ClassifierSpec,
    rng: SeededRng,
) -> BinnedAdapterModel:
    """Discretize the target per config and fit the classifier on the labels."""
    bins = build_bins(train.target, config)
    labels = assign_bins(train.target, bins)
    classifier = fit_classifier(spec, train.features, labels, bins.effective_k, rng)
    return BinnedAdapterModel(bins=bins, classifier=classifier, config=config)


def _adapter_proba(model: BinnedAdapterModel, features) -> np.ndarray:
    return model.classifier.predict_proba(features)


def predict_distribution(model: BinnedAdapterModel, x) -> ProbabilisticPrediction:
    """Predictive distribution at one feature vector (Eq.-exact moments)."""
    probs = _adapter_proba(model, np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return ProbabilisticPrediction.from_probabilities(model.bins.midpoints, probs[0])


def predict_distribution_batch(
    model: BinnedAdapterModel, features
) -> List[ProbabilisticPrediction]:
    probs = _adapter_proba(model, features)
    return [
        ProbabilisticPrediction.from_probabilities(model.bins.midpoints, row)
        for row in probs
    ]


@dataclass(frozen=True)
class EnsembleModel:
    """Fitted adapters plus their (renormalized) mixture weights."""

    members: tuple
    weights: np.ndarray
    spec: EnsembleSpec

    def __post_init__(self):
        if len(self.members) != len(self.weights):
            raise DimensionMismatch("one weight per member required")

    def predict(self, features) -> List[ProbabilisticPrediction]:
        return predict_ensemble_batch(self, features)

    def predict_mean(self, features) -> np.ndarray:
        """Point predictions (mixture means); the baselines' point model."""
        return np.asarray([p.mean for p in self.predict(features)])


def fit_ensemble(
    train: Dataset,
    spec: EnsembleSpec,
    cspec: ClassifierSpec,
    rng: SeededRng,
) -> EnsembleModel:
    """Fit one adapter per configuration on independent RNG streams.

    Configurations the training target cannot support (too few values for
    the requested quantile bins) are dropped and the remaining weights
    renormalized; if every configuration drops, AllConfigsDegenerate is
    raised. A constant target is not salvageable and propagates as
    DegenerateTarget.
    """
    members = []
    kept_weights = []
    kept_configs = []
    for b, config in enumerate(spec.configs):
        try:
            member = fit_binned_adapter(train, config, cspec, rng.derive("member", b))
        except TooFewDistinctValues:
            continue
        members.append(member)
        kept_weights.append(float(spec.weights[b]))
        kept_configs.append(config)
    if not members:
        raise AllConfigsDegenerate(
            "every bin configuration degenerated on this training target"
        )
    weights = np.asarray(kept_weights)
    weights = weights / weights.sum()
    return EnsembleModel(members=tuple(members), weights=weights, spec=spec)


def _merge_atoms(support: np.ndarray, probs: np.ndarray):
    """Sort atoms and sum masses at exactly-equal support values."""
    merged_support, inverse = np.unique(support, return_inverse=True)
    merged_probs = np.bincount(inverse, weights=probs)
    return merged_support, merged_probs


def predict_ensemble(model: EnsembleModel, x) -> ProbabilisticPrediction:
    """Mixture distribution over all members' midpoints at one input.

    Atoms at identical support values are merged; the mean is the
    weight-probability-midpoint double sum and the std is the full mixture
    standard deviation about that mean.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    support = np.concatenate([m.bins.midpoints for m in model.members])
    probs = np.concatenate(
        [
            w * _adapter_proba(m, x)[0]
            for m, w in zip(model.members, model.weights)
        ]
    )
    merged_support, merged_probs = _merge_atoms(support, probs)
    return ProbabilisticPrediction.from_probabilities(merged_support, merged_probs)


def predict_ensemble_batch(model: EnsembleModel, features) -> List[ProbabilisticPrediction]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features.reshape(1, -1)
    support = np.concatenate([m.bins.midpoints for m in model.members])
    all_probs = [
        w * _adapter_proba(m, features) for m, w in zip(model.members, model.weights)
    ]
    stacked = np.hstack(all_probs)  # (n, sum of member K_b)
    out = []
    for row in stacked:
        merged_support, merged_probs = _merge_atoms(support, row)
        out.append(
            ProbabilisticPrediction.from_probabilities(merged_support, merged_probs)
        )
    return out


def mix_predictions(
    preds: Sequence[ProbabilisticPrediction], weights: Sequence[float]
) -> ProbabilisticPrediction:
    """Finite mixture of already-built discrete predictions.

    Used to aggregate the inner-fold models of one outer fold into a single
    predictive distribution per test sample.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if len(preds) != weights.size:
        raise DimensionMismatch("one weight per prediction required")
    support = np.concatenate([p.support for p in preds])
    probs = np.concatenate([w * p.probs for p, w in zip(preds, weights)])
    merged_support, merged_probs = _merge_atoms(support, probs)
    return ProbabilisticPrediction.from_probabilities(merged_support, merged_probs)
