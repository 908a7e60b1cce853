"""Command-line surface: synth, fit, predict, evaluate, map.

Configuration can come from a TOML or JSON file (--config) with individual
flags taking precedence. Exit codes: 0 success, 1 configuration or usage
error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import io as bio
from .baselines import quantile_level_grid
from .classifiers import (
    DEFAULT_RF_HP,
    DEFAULT_SOFTMAX_HP,
    ClassifierKind,
    ClassifierSpec,
)
from .core import (
    BinuqError,
    ConfigError,
    DataError,
    Dataset,
    InsufficientLags,
    MissingCoordinates,
    NumericError,
    SchemaMismatch,
    SeededRng,
)
from .ensemble import default_ensemble_spec, fit_ensemble, predict_ensemble_batch
from .geostats import (
    Variogram,
    VariogramFamily,
    RasterGrid,
    empirical_semivariogram,
    fit_variogram,
    ordinary_krige,
)
from .synth import NoiseKind, SynthSpec, generate
from .validation import (
    CVPlan,
    HyperparameterGrid,
    MethodKind,
    MethodSpec,
    default_qr_grid,
    default_rf_grid,
    nested_cv,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_CONFIG_KEYS = {
    "data", "target", "coords", "methods", "classifier", "grid", "grids",
    "bin_counts", "outer_k", "inner_n", "seed", "calibration_fraction",
    "hyperparams", "cell_size", "n_lags", "variogram", "max_neighbors",
    "full_grid", "out", "out_dir",
    "n", "d", "noise", "sigma", "spatial",
}


class _Parser(argparse.ArgumentParser):
    """Raises ConfigError instead of exiting, so usage errors map to 1."""

    def error(self, message):
        raise ConfigError(message)


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.endswith(".json"):
        try:
            cfg = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"invalid JSON config {path}: {exc}") from exc
    elif path.endswith(".toml"):
        try:
            cfg = tomllib.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"invalid TOML config {path}: {exc}") from exc
    else:
        raise ConfigError(
            f"config {path} must end in .toml or .json"
        )
    if not isinstance(cfg, dict):
        raise ConfigError("config file must contain a table of settings")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _pick(args_value, cfg: dict, key: str, default):
    if args_value is not None:
        return args_value
    if key in cfg:
        return cfg[key]
    return default


def _parse_coords(value) -> Optional[Tuple[str, str]]:
    if value is None:
        return None
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",")]
    else:
        parts = [str(p) for p in value]
    if len(parts) != 2 or not all(parts):
        raise ConfigError("coords must name exactly two columns, e.g. 'x,y'")
    return (parts[0], parts[1])


def _parse_int_list(value) -> Tuple[int, ...]:
    if isinstance(value, str):
        items = [p.strip() for p in value.split(",") if p.strip()]
    else:
        items = list(value)
    try:
        out = tuple(int(v) for v in items)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a list of integers, got {value!r}") from None
    if not out:
        raise ConfigError("expected at least one integer")
    return out


def _classifier_kind(name: str) -> ClassifierKind:
    try:
        return ClassifierKind(name)
    except ValueError:
        valid = [k.value for k in ClassifierKind if k is not ClassifierKind.EXTERNAL]
        raise ConfigError(
            f"unknown classifier {name!r}; choose from {valid}"
        ) from None


def _method_kinds(value) -> List[MethodKind]:
    if isinstance(value, str):
        names = [p.strip() for p in value.split(",") if p.strip()]
    else:
        names = [str(v) for v in value]
    if not names:
        raise ConfigError("at least one method must be selected")
    kinds = []
    for name in names:
        try:
            kinds.append(MethodKind(name))
        except ValueError:
            valid = [k.value for k in MethodKind]
            raise ConfigError(
                f"unknown method {name!r}; choose from {valid}"
            ) from None
    return kinds


def _default_grid(
    kind: MethodKind, classifier: ClassifierKind, full: bool
) -> HyperparameterGrid:
    if kind is MethodKind.QUANTILE_REGRESSION:
        if full:
            return default_qr_grid()
        return HyperparameterGrid.from_mapping(
            {"alpha": [1.0], "fit_intercept": [True]}
        )
    if kind is MethodKind.QR_POSTPROCESS:
        if full:
            return HyperparameterGrid.from_mapping(
                {"alpha": [0.1, 0.5, 1.0, 2.0, 5.0, 10.0]}
            )
        return HyperparameterGrid.from_mapping({"alpha": [1.0]})
    if classifier is ClassifierKind.RANDOM_FOREST:
        if full:
            return default_rf_grid()
        return HyperparameterGrid.from_mapping(
            {"max_depth": [DEFAULT_RF_HP["max_depth"]]}
        )
    return HyperparameterGrid.from_mapping({"l2": [DEFAULT_SOFTMAX_HP["l2"]]})


def _grid_from_mapping(mapping) -> HyperparameterGrid:
    if not isinstance(mapping, dict) or not mapping:
        raise ConfigError("grid override must be a nonempty table of lists")
    cleaned = {}
    for name, values in mapping.items():
        if not isinstance(values, (list, tuple)) or not values:
            raise ConfigError(f"grid dimension {name!r} must be a nonempty list")
        cleaned[str(name)] = list(values)
    return HyperparameterGrid.from_mapping(cleaned)


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _load_config_file(args.config)
    spec = SynthSpec(
        n=int(_pick(args.n, cfg, "n", 100)),
        d=int(_pick(args.d, cfg, "d", 2)),
        noise=NoiseKind(_pick(args.noise, cfg, "noise", "heteroscedastic")),
        sigma=float(_pick(args.sigma, cfg, "sigma", 0.1)),
        spatial=bool(_pick(args.spatial or None, cfg, "spatial", False)),
        seed=int(_pick(args.seed, cfg, "seed", 0)),
    )
    data = generate(spec)
    header = list(data.feature_names)
    columns = [data.features[:, i] for i in range(data.d)]
    if data.coords is not None:
        header += ["x", "y"]
        columns += [data.coords[:, 0], data.coords[:, 1]]
    header.append(data.target_name)
    columns.append(data.target)
    rows = [[float(col[i]) for col in columns] for i in range(data.n)]
    bio.write_csv(args.out, header, rows)
    print(f"wrote {data.n} rows to {args.out}")
    return EXIT_OK


def _load_dataset(args, cfg: dict, need_target: bool = True) -> Dataset:
    data_path = _pick(args.data, cfg, "data", None)
    if data_path is None:
        raise ConfigError("no input data file given (--data or config 'data')")
    target = str(_pick(getattr(args, "target", None), cfg, "target", "target"))
    coords = _parse_coords(_pick(getattr(args, "coords", None), cfg, "coords", None))
    return bio.load_csv(data_path, target, coords)


def cmd_fit(args) -> int:
    cfg = _load_config_file(args.config)
    kind = _classifier_kind(str(_pick(args.classifier, cfg, "classifier",
                                      "random_forest")))
    hyperparams = cfg.get("hyperparams", {})
    if not isinstance(hyperparams, dict):
        raise ConfigError("hyperparams must be a table")
    bin_counts = _parse_int_list(_pick(args.bins, cfg, "bin_counts",
                                       (5, 10, 15, 20)))
    seed = int(_pick(args.seed, cfg, "seed", 0))
    cspec = ClassifierSpec(kind, dict(hyperparams))
    data = _load_dataset(args, cfg)
    model = fit_ensemble(
        data, default_ensemble_spec(bin_counts), cspec, SeededRng(seed).derive("fit")
    )
    bio.save_model(model, args.out, data.feature_names, data.target_name)
    print(
        f"fitted {len(model.members)} member(s) on {data.n} samples; "
        f"saved to {args.out}"
    )
    return EXIT_OK


def _feature_block(path: str, feature_names: Sequence[str]):
    """Feature matrix in training column order, plus optional coordinates.

    The file may contain extra columns (ids, target, coordinates); they are
    passed over. Every training feature must be present by name.
    """
    rows = bio.read_rows(path)
    if not rows:
        raise bio.IoError(f"{path} is empty; expected a header row")
    header = [h.strip() for h in rows[0]]
    missing = [name for name in feature_names if name not in header]
    if missing:
        raise SchemaMismatch(
            f"input is missing training feature column(s) {missing}; "
            f"found {header}"
        )
    idx = [header.index(name) for name in feature_names]
    coord_idx = None
    if "x" in header and "y" in header:
        coord_idx = (header.index("x"), header.index("y"))
    features, coords = [], []
    for r, row in enumerate(rows[1:], start=2):
        try:
            features.append([float(row[i]) for i in idx])
            if coord_idx:
                coords.append([float(row[i]) for i in coord_idx])
        except (ValueError, IndexError):
            raise bio.ParseError(r, 0, "bad numeric cell") from None
    if not features:
        raise bio.EmptyDataset(f"{path} has a header but no data rows")
    X = np.asarray(features, dtype=np.float64)
    C = np.asarray(coords, dtype=np.float64) if coord_idx else None
    return X, C


def cmd_predict(args) -> int:
    model, feature_names, _target = bio.load_model(args.model)
    X, coords = _feature_block(args.data, feature_names)
    preds = predict_ensemble_batch(model, X)
    levels = quantile_level_grid()
    header = ["id", "mean", "std"] + [f"q{lv:.2f}" for lv in levels]
    if coords is not None:
        header += ["x", "y"]
    out_rows = []
    for i, p in enumerate(preds):
        row = [i, float(p.mean), float(p.std)]
        row.extend(float(p.quantile(lv)) for lv in levels)
        if coords is not None:
            row.extend([float(coords[i, 0]), float(coords[i, 1])])
        out_rows.append(row)
    bio.write_csv(args.out, header, out_rows)
    print(f"wrote {len(out_rows)} predictions to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config_file(args.config)
    kinds = _method_kinds(_pick(args.methods, cfg, "methods",
                                ("binned_ensemble",)))
    classifier = _classifier_kind(
        str(_pick(args.classifier, cfg, "classifier", "random_forest"))
    )
    full_grid = bool(_pick(args.full_grid or None, cfg, "full_grid", False))
    shared_grid = cfg.get("grid")
    per_method = cfg.get("grids", {})
    if not isinstance(per_method, dict):
        raise ConfigError("grids must be a table keyed by method name")
    unknown = set(per_method) - {k.value for k in MethodKind}
    if unknown:
        raise ConfigError(f"grids given for unknown methods: {sorted(unknown)}")
    bin_counts = _parse_int_list(_pick(args.bins, cfg, "bin_counts",
                                       (5, 10, 15, 20)))
    plan = CVPlan(
        outer_k=int(_pick(args.outer_k, cfg, "outer_k", 5)),
        inner_n=int(_pick(args.inner_n, cfg, "inner_n", 5)),
        seed=int(_pick(args.seed, cfg, "seed", 0)),
        calibration_fraction=float(
            _pick(None, cfg, "calibration_fraction", 0.25)
        ),
    )
    specs = []
    for kind in kinds:
        if kind.value in per_method:
            grid = _grid_from_mapping(per_method[kind.value])
        elif shared_grid is not None:
            grid = _grid_from_mapping(shared_grid)
        else:
            grid = _default_grid(kind, classifier, full_grid)
        cspec = None
        ensemble = None
        if kind is not MethodKind.QUANTILE_REGRESSION:
            cspec = ClassifierSpec(classifier)
            ensemble = default_ensemble_spec(bin_counts)
        specs.append(MethodSpec(kind, grid, classifier=cspec, ensemble=ensemble))

    data = _load_dataset(args, cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    payloads = []
    for spec in specs:
        report = nested_cv(data, spec, plan)
        payloads.append(report.to_dict())
        print(f"{spec.tag}: mean CRPS {report.overall_crps:.6f} "
              f"({report.timing_seconds:.1f}s)")
    bio.write_report_json(payloads, os.path.join(args.out_dir, "report.json"))
    bio.write_summary_csv(payloads, os.path.join(args.out_dir, "summary.csv"))
    print(f"wrote report.json and summary.csv to {args.out_dir}")
    return EXIT_OK


def _read_prediction_points(path: str):
    rows = bio.read_rows(path)
    if not rows:
        raise bio.IoError(f"{path} is empty; expected a header row")
    header = [h.strip() for h in rows[0]]
    if "x" not in header or "y" not in header:
        raise MissingCoordinates(
            "prediction file has no 'x'/'y' coordinate columns; rerun "
            "predict on data that includes coordinates"
        )
    for required in ("mean", "std"):
        if required not in header:
            raise bio.MissingColumn(f"column {required!r} not in {path}")
    ix, iy = header.index("x"), header.index("y")
    im, istd = header.index("mean"), header.index("std")
    coords, means, stds = [], [], []
    for r, row in enumerate(rows[1:], start=2):
        try:
            coords.append([float(row[ix]), float(row[iy])])
            means.append(float(row[im]))
            stds.append(float(row[istd]))
        except (ValueError, IndexError):
            raise bio.ParseError(r, 0, "bad numeric cell") from None
    return (np.asarray(coords), np.asarray(means), np.asarray(stds))


def cmd_map(args) -> int:
    cfg = _load_config_file(args.config)
    family = VariogramFamily(
        str(_pick(args.variogram, cfg, "variogram", "spherical"))
    )
    n_lags = int(_pick(args.n_lags, cfg, "n_lags", 12))
    max_neighbors = int(_pick(args.max_neighbors, cfg, "max_neighbors", 32))
    cell_size = _pick(args.cell_size, cfg, "cell_size", None)

    coords, means, stds = _read_prediction_points(args.predictions)
    x0, y0 = coords.min(axis=0)
    x1, y1 = coords.max(axis=0)
    span = max(x1 - x0, y1 - y0)
    if span <= 0:
        raise DataError("all prediction points are coincident; cannot grid")
    if cell_size is None:
        cell_size = span / 50.0
    cell_size = float(cell_size)
    if cell_size <= 0:
        raise ConfigError("cell_size must be > 0")
    n_cols = max(1, math.ceil((x1 - x0) / cell_size))
    n_rows = max(1, math.ceil((y1 - y0) / cell_size))
    template = RasterGrid(float(x0), float(y0), cell_size, n_rows, n_cols)

    max_dist = float(np.hypot(x1 - x0, y1 - y0)) / 2.0
    os.makedirs(args.out_dir, exist_ok=True)
    for name, values in (("mean", means), ("std", stds)):
        try:
            emp = empirical_semivariogram(coords, values, n_lags, max_dist)
            vg = fit_variogram(
                emp, family, variance=float(np.var(values)), max_dist=max_dist
            )
        except InsufficientLags:
            # Too few distinct separation distances to constrain a model
            # (a handful of samples, or strongly gridded ones). A pure
            # nugget at the sample variance still yields a usable map: the
            # local neighborhood mean.
            nugget = float(np.var(values)) or 1.0
            vg = Variogram(family, nugget, 0.0, max_dist)
            print(
                f"{name}: too few semivariogram lags; falling back to a "
                "pure-nugget variogram",
                file=sys.stderr,
            )
        surface, _krig_var = ordinary_krige(
            coords, values, vg, template, max_neighbors
        )
        base = os.path.join(args.out_dir, name)
        bio.write_ascii_grid(surface, base + ".asc")
        bio.write_png_map(surface, base + ".png", base + "_scale.json")
        print(
            f"{name}: {family.value} variogram (nugget {vg.nugget:.4g}, "
            f"psill {vg.partial_sill:.4g}, range {vg.range_param:.4g}) -> "
            f"{base}.asc/.png"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser wiring.
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(
        prog="binuq",
        description=(
            "Regression with uncertainty from probabilistic classifiers "
            "over binned targets, benchmark harness, and kriged maps."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    p.add_argument("--n", type=int), p.add_argument("--d", type=int)
    p.add_argument("--noise", choices=[k.value for k in NoiseKind])
    p.add_argument("--sigma", type=float)
    p.add_argument("--spatial", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit and persist a binned ensemble model")
    p.add_argument("--data"), p.add_argument("--target")
    p.add_argument("--coords", help="two coordinate column names, e.g. x,y")
    p.add_argument("--classifier")
    p.add_argument("--bins", help="comma-separated bin counts, e.g. 5,10,15,20")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="emit mean/std/quantile CSV from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="nested cross-validation benchmark")
    p.add_argument("--data"), p.add_argument("--target")
    p.add_argument("--coords")
    p.add_argument("--methods", help="comma-separated method names")
    p.add_argument("--classifier")
    p.add_argument("--bins")
    p.add_argument("--outer-k", dest="outer_k", type=int)
    p.add_argument("--inner-n", dest="inner_n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--full-grid", dest="full_grid", action="store_true")
    p.add_argument("--config")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("map", help="krige predictions onto rasters and PNGs")
    p.add_argument("--predictions", required=True,
                   help="CSV produced by the predict command")
    p.add_argument("--cell-size", dest="cell_size", type=float)
    p.add_argument("--n-lags", dest="n_lags", type=int)
    p.add_argument("--variogram",
                   choices=[f.value for f in VariogramFamily])
    p.add_argument("--max-neighbors", dest="max_neighbors", type=int)
    p.add_argument("--config")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_map)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BinuqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
