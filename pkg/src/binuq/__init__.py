"""binuq: binned uncertainty quantification for regression.

Turns any probabilistic classifier into a regression model with
distributional uncertainty by discretizing the target, ensembles it over
bin configurations, benchmarks against quantile-regression and conformal
baselines under nested cross-validation with CRPS, and rasterizes
predictions into maps via ordinary kriging.
"""

__version__ = "0.1.0"

from .core import (
    BinuqError,
    ConfigError,
    DataError,
    Dataset,
    NumericError,
    ProbabilisticPrediction,
    SeededRng,
    validate_dataset,
)
from .binning import (
    BinningConfig,
    BinningStrategy,
    BinStructure,
    assign_bins,
    build_bins,
    quantile_edges,
    uniform_edges,
)
from .classifiers import ClassifierKind, ClassifierSpec, fit_classifier
from .ensemble import (
    EnsembleModel,
    EnsembleSpec,
    default_ensemble_spec,
    fit_binned_adapter,
    fit_ensemble,
    mix_predictions,
    predict_distribution,
    predict_ensemble,
    predict_ensemble_batch,
)
from .baselines import (
    QuantileCurve,
    conformal_predict,
    fit_quantile_regression,
    qr_postprocess_fit,
    qr_predict,
    quantile_level_grid,
    split_conformal_calibrate,
)
from .metrics import crps_discrete, crps_from_quantiles, empirical_coverage
from .validation import (
    CVPlan,
    CVReport,
    HyperparameterGrid,
    MethodKind,
    MethodSpec,
    grid_enumerate,
    make_folds,
    nested_cv,
)
from .geostats import (
    RasterGrid,
    Variogram,
    VariogramFamily,
    empirical_semivariogram,
    fit_variogram,
    ordinary_krige,
)
from .synth import NoiseKind, SynthSpec, generate

__all__ = [
    "BinuqError",
    "ConfigError",
    "DataError",
    "Dataset",
    "NumericError",
    "ProbabilisticPrediction",
    "SeededRng",
    "validate_dataset",
    "BinningConfig",
    "BinningStrategy",
    "BinStructure",
    "assign_bins",
    "build_bins",
    "quantile_edges",
    "uniform_edges",
    "ClassifierKind",
    "ClassifierSpec",
    "fit_classifier",
    "EnsembleModel",
    "EnsembleSpec",
    "default_ensemble_spec",
    "fit_binned_adapter",
    "fit_ensemble",
    "mix_predictions",
    "predict_distribution",
    "predict_ensemble",
    "predict_ensemble_batch",
    "QuantileCurve",
    "conformal_predict",
    "fit_quantile_regression",
    "qr_postprocess_fit",
    "qr_predict",
    "quantile_level_grid",
    "split_conformal_calibrate",
    "crps_discrete",
    "crps_from_quantiles",
    "empirical_coverage",
    "CVPlan",
    "CVReport",
    "HyperparameterGrid",
    "MethodKind",
    "MethodSpec",
    "grid_enumerate",
    "make_folds",
    "nested_cv",
    "RasterGrid",
    "Variogram",
    "VariogramFamily",
    "empirical_semivariogram",
    "fit_variogram",
    "ordinary_krige",
    "NoiseKind",
    "SynthSpec",
    "generate",
]
