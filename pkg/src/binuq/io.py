"""File formats: CSV ingestion, the versioned JSON model container,
report/summary writers, ESRI ASCII grids, and PNG maps with a value-scale
sidecar.

All writers are deterministic (sorted keys, fixed formatting) so reruns
with the same seed produce byte-identical files. Model floats are stored
with Python's shortest round-tripping repr, which json uses natively, so
save/load is exact.
"""

from __future__ import annotations

import csv
import json
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .binning import BinningConfig, BinningStrategy, BinStructure
from .classifiers import (
    ClassifierKind,
    RandomForestModel,
    SoftmaxModel,
    _Tree,
)
from .core import (
    Dataset,
    DataError,
    EmptyDataset,
    InvalidDistribution,
    IoError,
    MissingColumn,
    ParseError,
    RowSumViolation,
    SchemaMismatch,
    validate_dataset,
    VersionMismatch,
)
from .ensemble import BinnedAdapterModel, EnsembleModel, EnsembleSpec
from .geostats import RasterGrid

MODEL_FORMAT = "binuq-model"
MODEL_VERSION = "1.0"
REPORT_FORMAT = "binuq-report"
REPORT_VERSION = "1.0"


# ---------------------------------------------------------------------------
# CSV ingestion.
# ---------------------------------------------------------------------------

def read_rows(path: str) -> List[List[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def load_csv(
    path: str,
    target_column: str,
    coord_columns: Optional[Sequence[str]] = None,
) -> Dataset:
    """Parse a headered CSV into a Dataset.

    Every column that is not the target and not a coordinate becomes a
    feature, in file order. ParseError carries the 1-based file line and
    0-based column index of the offending cell.
    """
    rows = read_rows(path)
    if not rows:
        raise IoError(f"{path} is empty; expected a header row")
    header = [name.strip() for name in rows[0]]
    if target_column not in header:
        raise MissingColumn(f"target column {target_column!r} not in header")
    coord_idx: List[int] = []
    if coord_columns:
        for name in coord_columns:
            if name not in header:
                raise MissingColumn(f"coordinate column {name!r} not in header")
            coord_idx.append(header.index(name))
    target_idx = header.index(target_column)
    feature_idx = [
        i for i in range(len(header)) if i != target_idx and i not in coord_idx
    ]
    if not rows[1:]:
        raise EmptyDataset(f"{path} has a header but no data rows")

    def parse(cell: str, line: int, col: int) -> float:
        try:
            return float(cell)
        except ValueError:
            raise ParseError(
                line, col, f"cannot parse {cell!r} in column {header[col]!r}"
            ) from None

    features, target, coords = [], [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(
                r, 0, f"expected {len(header)} cells, found {len(row)}"
            )
        features.append([parse(row[i], r, i) for i in feature_idx])
        target.append(parse(row[target_idx], r, target_idx))
        if coord_idx:
            coords.append([parse(row[i], r, i) for i in coord_idx])
    return validate_dataset(
        np.asarray(features, dtype=np.float64),
        np.asarray(target, dtype=np.float64),
        raw_coords=np.asarray(coords, dtype=np.float64) if coord_idx else None,
        feature_names=[header[i] for i in feature_idx],
        target_name=target_column,
    )


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def _format_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# Model container.
# ---------------------------------------------------------------------------

def _floats(a) -> list:
    return [float(v) for v in np.asarray(a).ravel()]


def _classifier_payload(clf) -> dict:
    if isinstance(clf, RandomForestModel):
        return {
            "kind": ClassifierKind.RANDOM_FOREST.value,
            "hyperparams": dict(clf.hyperparams),
            "n_classes": clf.n_classes,
            "n_features": clf.n_features,
            "present_labels": [int(v) for v in clf.present_labels],
            "trees": [
                {
                    "feature": [int(v) for v in t.feature],
                    "threshold": _floats(t.threshold),
                    "left": [int(v) for v in t.left],
                    "right": [int(v) for v in t.right],
                    "value": [_floats(row) for row in t.value],
                }
                for t in clf.trees
            ],
        }
    if isinstance(clf, SoftmaxModel):
        return {
            "kind": ClassifierKind.SOFTMAX.value,
            "hyperparams": dict(clf.hyperparams),
            "n_classes": clf.n_classes,
            "n_features": clf.n_features,
            "present_labels": [int(v) for v in clf.present_labels],
            "weights": [_floats(row) for row in clf.weights],
            "intercept": _floats(clf.intercept),
            "mean": _floats(clf.mean),
            "scale": _floats(clf.scale),
            "keep": [bool(v) for v in clf.keep],
            "converged": clf.converged,
        }
    raise SchemaMismatch(
        f"classifier of type {type(clf).__name__} cannot be persisted"
    )


def _classifier_from_payload(payload: dict):
    kind = ClassifierKind(payload["kind"])
    if kind is ClassifierKind.RANDOM_FOREST:
        trees = [
            _Tree(
                feature=np.asarray(t["feature"], dtype=np.int64),
                threshold=np.asarray(t["threshold"], dtype=np.float64),
                left=np.asarray(t["left"], dtype=np.int64),
                right=np.asarray(t["right"], dtype=np.int64),
                value=np.asarray(t["value"], dtype=np.float64),
            )
            for t in payload["trees"]
        ]
        return RandomForestModel(
            trees=trees,
            present_labels=np.asarray(payload["present_labels"], dtype=np.int64),
            n_classes=payload["n_classes"],
            n_features=payload["n_features"],
            hyperparams=payload["hyperparams"],
        )
    if kind is ClassifierKind.SOFTMAX:
        return SoftmaxModel(
            weights=np.asarray(payload["weights"], dtype=np.float64),
            intercept=np.asarray(payload["intercept"], dtype=np.float64),
            mean=np.asarray(payload["mean"], dtype=np.float64),
            scale=np.asarray(payload["scale"], dtype=np.float64),
            keep=np.asarray(payload["keep"], dtype=bool),
            present_labels=np.asarray(payload["present_labels"], dtype=np.int64),
            n_classes=payload["n_classes"],
            n_features=payload["n_features"],
            hyperparams=payload["hyperparams"],
            converged=payload["converged"],
        )
    raise SchemaMismatch(f"unsupported classifier kind {payload['kind']!r}")


def model_to_payload(
    model: EnsembleModel, feature_names: Sequence[str], target_name: str
) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "feature_names": list(feature_names),
        "target_name": target_name,
        "spec": {
            "configs": [
                {"strategy": c.strategy.value, "k": c.k} for c in model.spec.configs
            ],
            "weights": _floats(model.spec.weights),
        },
        "weights": _floats(model.weights),
        "members": [
            {
                "config": {
                    "strategy": m.config.strategy.value,
                    "k": m.config.k,
                },
                "edges": _floats(m.bins.edges),
                "classifier": _classifier_payload(m.classifier),
            }
            for m in model.members
        ],
    }


def save_model(
    model: EnsembleModel,
    path: str,
    feature_names: Sequence[str],
    target_name: str,
):
    payload = model_to_payload(model, feature_names, target_name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _check_container(payload: dict, expected_format: str):
    if not isinstance(payload, dict) or payload.get("format") != expected_format:
        raise SchemaMismatch(
            f"file is not a {expected_format} container"
        )
    version = str(payload.get("version", ""))
    try:
        major = int(version.split(".")[0])
    except ValueError:
        raise VersionMismatch(f"unparseable container version {version!r}") from None
    supported = int(MODEL_VERSION.split(".")[0])
    if major > supported:
        raise VersionMismatch(
            f"container version {version} is newer than supported "
            f"{MODEL_VERSION}"
        )


def load_model(path: str) -> Tuple[EnsembleModel, List[str], str]:
    """Returns (model, feature_names, target_name)."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path} is not valid JSON: {exc}") from exc
    _check_container(payload, MODEL_FORMAT)
    try:
        spec = EnsembleSpec(
            configs=tuple(
                BinningConfig(BinningStrategy(c["strategy"]), int(c["k"]))
                for c in payload["spec"]["configs"]
            ),
            weights=np.asarray(payload["spec"]["weights"], dtype=np.float64),
        )
        members = []
        for m in payload["members"]:
            config = BinningConfig(
                BinningStrategy(m["config"]["strategy"]), int(m["config"]["k"])
            )
            bins = BinStructure.from_edges(
                np.asarray(m["edges"], dtype=np.float64), config.strategy
            )
            members.append(
                BinnedAdapterModel(
                    bins=bins,
                    classifier=_classifier_from_payload(m["classifier"]),
                    config=config,
                )
            )
        model = EnsembleModel(
            members=tuple(members),
            weights=np.asarray(payload["weights"], dtype=np.float64),
            spec=spec,
        )
        feature_names = [str(v) for v in payload["feature_names"]]
        target_name = str(payload["target_name"])
    except (KeyError, TypeError) as exc:
        raise SchemaMismatch(f"model container is missing field: {exc}") from exc
    return model, feature_names, target_name


# ---------------------------------------------------------------------------
# Reports.
# ---------------------------------------------------------------------------

def write_report_json(report_payloads: List[dict], path: str):
    document = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "reports": report_payloads,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path} is not valid JSON: {exc}") from exc
    _check_container(payload, REPORT_FORMAT)
    return payload


def write_summary_csv(reports: List[dict], path: str):
    """One row per method: overall mean CRPS then per-fold means."""
    n_folds = max(len(r["fold_crps"]) for r in reports) if reports else 0
    header = ["method", "mean_crps"] + [f"fold_{i}_crps" for i in range(n_folds)]
    rows = []
    for r in reports:
        row = [r["method"], float(r["overall_crps"])]
        row.extend(float(v) for v in r["fold_crps"])
        rows.append(row)
    write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# ESRI ASCII grids and PNG maps.
# ---------------------------------------------------------------------------

def write_ascii_grid(grid: RasterGrid, path: str):
    lines = [
        f"ncols {grid.n_cols}",
        f"nrows {grid.n_rows}",
        f"xllcorner {repr(float(grid.x_origin))}",
        f"yllcorner {repr(float(grid.y_origin))}",
        f"cellsize {repr(float(grid.cell_size))}",
        f"NODATA_value {repr(float(grid.nodata))}",
    ]
    for row in grid.values:
        lines.append(" ".join(f"{v:.6g}" for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_ascii_grid(path: str) -> RasterGrid:
    try:
        with open(path, encoding="utf-8") as fh:
            raw_lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    expected = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize",
                "NODATA_value"]
    header = {}
    if len(raw_lines) < 6:
        raise ParseError(1, 0, "truncated ASCII grid header")
    for line_no, key in enumerate(expected):
        parts = raw_lines[line_no].split()
        if len(parts) != 2 or parts[0] != key:
            raise ParseError(line_no + 1, 0, f"expected header token {key!r}")
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise ParseError(line_no + 1, 1, f"bad value for {key!r}") from None
    n_cols, n_rows = int(header["ncols"]), int(header["nrows"])
    values = []
    for line_no, line in enumerate(raw_lines[6:], start=7):
        try:
            values.append([float(tok) for tok in line.split()])
        except ValueError:
            raise ParseError(line_no, 0, "bad numeric cell") from None
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (n_rows, n_cols):
        raise ParseError(
            7, 0, f"grid body {values.shape} does not match header "
            f"{n_rows}x{n_cols}"
        )
    return RasterGrid(
        x_origin=header["xllcorner"],
        y_origin=header["yllcorner"],
        cell_size=header["cellsize"],
        n_rows=n_rows,
        n_cols=n_cols,
        values=values,
        nodata=header["NODATA_value"],
    )


def write_png_map(grid: RasterGrid, path: str, sidecar_path: str):
    """8-bit grayscale render with a linear value->gray ramp.

    The sidecar records the ramp endpoints so gray levels are convertible
    back to data values; nodata cells render as gray 0.
    """
    values = grid.values
    valid = values != grid.nodata
    if valid.any():
        vmin = float(values[valid].min())
        vmax = float(values[valid].max())
    else:
        vmin = vmax = 0.0
    span = vmax - vmin
    if span > 0:
        scaled = np.clip((values - vmin) / span, 0.0, 1.0)
        gray = np.rint(scaled * 255.0).astype(np.uint8)
    else:
        gray = np.full(values.shape, 128, dtype=np.uint8)
    gray[~valid] = 0
    Image.fromarray(gray, mode="L").save(path, format="PNG")
    sidecar = {
        "format": "binuq-scale",
        "version": "1.0",
        "ramp": "linear-grayscale",
        "value_at_gray_0": vmin,
        "value_at_gray_255": vmax,
        "nodata_gray": 0,
        "png": str(path),
    }
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# External probability matrices.
# ---------------------------------------------------------------------------

def read_external_probabilities(path: str) -> Tuple[List[str], np.ndarray]:
    """CSV of one id column followed by K probability columns.

    Each row's probabilities must sum to 1 within 1e-6; returns the ids
    and the (m, K) matrix.
    """
    rows = read_rows(path)
    if not rows:
        raise IoError(f"{path} is empty; expected a header row")
    header = rows[0]
    if len(header) < 2:
        raise DataError("probability CSV needs an id column plus >= 1 class")
    width = len(header)
    ids, probs = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ParseError(r, 0, f"expected {width} cells, found {len(row)}")
        ids.append(row[0])
        try:
            values = [float(v) for v in row[1:]]
        except ValueError:
            raise ParseError(r, 1, "bad probability cell") from None
        if any(v < 0 for v in values):
            raise InvalidDistribution(f"negative probability on line {r}")
        total = float(sum(values))
        if abs(total - 1.0) > 1e-6:
            raise RowSumViolation(r, total)
        probs.append(values)
    if not probs:
        raise EmptyDataset(f"{path} has a header but no data rows")
    return ids, np.asarray(probs, dtype=np.float64)
