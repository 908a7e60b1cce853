"""Acceptance checks, one test per numbered criterion.

Each test does its own measurement and then records exactly one PASS/FAIL
line through the ``criterion`` fixture; conftest replays the lines in a
terminal-summary section at the end of the run.
"""

import json
import math
import time

import numpy as np
from scipy.stats import norm

from binuq import (
    BinningConfig,
    BinningStrategy,
    ClassifierKind,
    ClassifierSpec,
    CVPlan,
    EnsembleSpec,
    HyperparameterGrid,
    MethodKind,
    MethodSpec,
    NoiseKind,
    ProbabilisticPrediction,
    QuantileCurve,
    RasterGrid,
    SeededRng,
    SynthSpec,
    Variogram,
    VariogramFamily,
    assign_bins,
    build_bins,
    crps_discrete,
    crps_from_quantiles,
    default_ensemble_spec,
    fit_ensemble,
    fit_variogram,
    generate,
    mix_predictions,
    nested_cv,
    ordinary_krige,
    predict_ensemble_batch,
    quantile_edges,
    quantile_level_grid,
    split_conformal_calibrate,
    uniform_edges,
    validate_dataset,
)
from binuq.ensemble import predict_distribution_batch
from binuq.validation import default_qr_grid, default_rf_grid
from conftest import make_dataset


def fuzz_distribution(gen, k, lo, hi):
    while True:
        support = np.sort(gen.uniform(lo, hi, k))
        if np.all(np.diff(support) > 0):
            break
    return ProbabilisticPrediction.from_probabilities(
        support, gen.dirichlet(np.ones(k))
    )


def test_criterion_1_moment_reconstruction_oracle(criterion):
    gen = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        pred = fuzz_distribution(gen, int(gen.integers(2, 13)), -50.0, 50.0)
        mean_o = math.fsum(p * m for p, m in zip(pred.probs, pred.support))
        var_o = math.fsum(
            p * (m - mean_o) ** 2 for p, m in zip(pred.probs, pred.support)
        )
        worst = max(
            worst,
            abs(pred.mean - mean_o),
            abs(pred.std - math.sqrt(var_o)),
        )
    elapsed = time.perf_counter() - t0
    criterion(
        1,
        worst <= 1e-12 and elapsed < 1.0,
        f"mean/std vs fsum oracle on 1000 fuzzed distributions, "
        f"max abs err {worst:.2e} (tol 1e-12), {elapsed:.2f}s",
    )


def test_criterion_2_crps_against_monte_carlo(criterion):
    gen = np.random.default_rng(202)
    t0 = time.perf_counter()

    worst_mc = 0.0
    for _ in range(50):
        pred = fuzz_distribution(gen, int(gen.integers(2, 9)), -2.0, 2.0)
        y = float(gen.uniform(-2.5, 2.5))
        cum = np.cumsum(pred.probs)
        u = gen.random(1_000_000)
        idx = np.minimum(
            np.searchsorted(cum, u, side="left"), pred.support.size - 1
        )
        draws = pred.support[idx]
        half = draws.size // 2
        mc = np.abs(draws - y).mean() - 0.5 * np.abs(
            draws[:half] - draws[half:]
        ).mean()
        worst_mc = max(worst_mc, abs(mc - crps_discrete(pred, y)))

    point_exact = True
    for _ in range(20):
        m, y = gen.uniform(-5.0, 5.0, 2)
        pm = ProbabilisticPrediction.from_probabilities([m], [1.0])
        point_exact = point_exact and crps_discrete(pm, float(y)) == abs(m - y)

    worst_inv = 0.0
    for _ in range(50):
        pred = fuzz_distribution(gen, int(gen.integers(2, 9)), -2.0, 2.0)
        y = float(gen.uniform(-2.5, 2.5))
        c = float(gen.uniform(-3.0, 3.0))
        s = float(gen.uniform(0.5, 2.0))
        base = crps_discrete(pred, y)
        shifted = ProbabilisticPrediction.from_probabilities(
            pred.support + c, pred.probs
        )
        scaled = ProbabilisticPrediction.from_probabilities(
            pred.support * s, pred.probs
        )
        worst_inv = max(
            worst_inv,
            abs(crps_discrete(shifted, y + c) - base),
            abs(crps_discrete(scaled, s * y) - s * base),
        )

    elapsed = time.perf_counter() - t0
    criterion(
        2,
        worst_mc <= 1e-2 and point_exact and worst_inv <= 1e-12
        and elapsed < 30.0,
        f"CRPS vs 1e6-draw MC on 50 distributions, max err {worst_mc:.2e} "
        f"(tol 1e-2); point mass exact; shift/scale err {worst_inv:.2e} "
        f"(tol 1e-12); {elapsed:.1f}s",
    )


def test_criterion_3_single_member_identity_and_mixture_variance(criterion):
    ds = make_dataset(n=80, seed=31)
    model = fit_ensemble(
        ds,
        EnsembleSpec.uniform_weights([BinningConfig(BinningStrategy.UNIFORM, 6)]),
        ClassifierSpec(ClassifierKind.RANDOM_FOREST, {"max_depth": 4}),
        SeededRng(3),
    )
    queries = np.random.default_rng(303).uniform(0.0, 1.0, (100, 2))
    ens = predict_ensemble_batch(model, queries)
    mem = predict_distribution_batch(model.members[0], queries)
    bit_equal = all(
        np.array_equal(e.support, m.support)
        and np.array_equal(e.probs, m.probs)
        and e.mean == m.mean
        and e.std == m.std
        for e, m in zip(ens, mem)
    )

    gen = np.random.default_rng(313)
    worst = 0.0
    for _ in range(100):
        parts = [
            fuzz_distribution(gen, int(gen.integers(2, 7)), -3.0, 3.0)
            for _ in range(int(gen.integers(2, 5)))
        ]
        w = gen.dirichlet(np.ones(len(parts)))
        mixed = mix_predictions(parts, w)
        mu = math.fsum(wi * p.mean for wi, p in zip(w, parts))
        second = math.fsum(
            wi * (p.std**2 + p.mean**2) for wi, p in zip(w, parts)
        )
        worst = max(
            worst,
            abs(mixed.mean - mu),
            abs(mixed.std**2 - (second - mu * mu)),
        )

    criterion(
        3,
        bit_equal and worst <= 1e-12,
        f"B=1 predictions bit-equal the lone member on 100 queries; "
        f"total-variance identity err {worst:.2e} (tol 1e-12)",
    )


def test_criterion_4_binning_invariants(criterion):
    gen = np.random.default_rng(404)

    worst_rel = 0.0
    for _ in range(50):
        y = gen.uniform(-100.0, 100.0, int(gen.integers(5, 200)))
        k = int(gen.integers(2, 21))
        edges = uniform_edges(y, k).edges
        nominal = (edges[-1] - edges[0]) / k
        worst_rel = max(
            worst_rel, float(np.max(np.abs(np.diff(edges) - nominal))) / nominal
        )

    y = gen.standard_normal(1000)
    assert np.unique(y).size == y.size
    max_imbalance = 0
    for k in (5, 10, 20):
        bins = quantile_edges(y, k)
        counts = np.bincount(assign_bins(y, bins) - 1, minlength=bins.effective_k)
        max_imbalance = max(
            max_imbalance, int(np.max(np.abs(counts - 1000 // k)))
        )

    monotone = True
    for _ in range(20):
        y_train = gen.uniform(-50.0, 50.0, 300)
        qs = np.sort(gen.uniform(-60.0, 60.0, 200))
        for strategy in (BinningStrategy.UNIFORM, BinningStrategy.QUANTILE):
            bins = build_bins(y_train, BinningConfig(strategy, 8))
            monotone = monotone and bool(
                np.all(np.diff(assign_bins(qs, bins)) >= 0)
            )

    criterion(
        4,
        worst_rel <= 1e-12 and max_imbalance <= 1 and monotone,
        f"uniform width rel err {worst_rel:.2e} (tol 1e-12); quantile "
        f"occupancy imbalance {max_imbalance} (tol 1); assignment monotone "
        f"on sorted fuzz",
    )


class _LinearPoint:
    """Noise-free point model; the conformal guarantee is model-agnostic."""

    def predict(self, features):
        return 2.0 * np.asarray(features, dtype=np.float64)[:, 0]


def test_criterion_5_conformal_coverage(criterion):
    t0 = time.perf_counter()
    point = _LinearPoint()
    coverages = []
    for trial in range(200):
        gen = np.random.default_rng(5000 + trial)
        X = gen.uniform(0.0, 1.0, (200, 1))
        y = 2.0 * X[:, 0] + gen.standard_normal(200)
        model = split_conformal_calibrate(
            point, validate_dataset(X[:100], y[:100])
        )
        hw = model.half_width(0.1)
        resid = np.abs(y[100:] - 2.0 * X[100:, 0])
        coverages.append(float(np.mean(resid <= hw)))
    mean_cov = float(np.mean(coverages))
    elapsed = time.perf_counter() - t0
    criterion(
        5,
        0.88 <= mean_cov <= 0.94 and elapsed < 120.0,
        f"mean 90% coverage {mean_cov:.4f} over 200 trials "
        f"(required [0.88, 0.94]), {elapsed:.1f}s",
    )


def test_criterion_6_nested_cv_hygiene(criterion):
    ds = make_dataset(n=100, seed=61, hetero=True)
    method = MethodSpec(
        MethodKind.CONFORMAL,
        HyperparameterGrid.from_mapping({"max_depth": [4]}),
        classifier=ClassifierSpec(ClassifierKind.RANDOM_FOREST),
        ensemble=EnsembleSpec.uniform_weights(
            [BinningConfig(BinningStrategy.UNIFORM, 6)]
        ),
    )
    plan = CVPlan(outer_k=5, inner_n=5, seed=0)
    report = nested_cv(ds, method, plan)

    overlaps = 0
    for cell in report.cells:
        train = set(cell.train_indices.tolist())
        val = set(cell.validation_indices.tolist())
        cal = set(cell.calibration_indices.tolist())
        test = set(report.outer_folds[cell.outer].tolist())
        overlaps += len(train & val) + len(train & cal) + len(val & cal)
        overlaps += len(test & (train | val | cal))
    cells_complete = (
        len(report.cells) == 25
        and len({(c.outer, c.inner) for c in report.cells}) == 25
        and all(c.calibration_indices.size > 0 for c in report.cells)
    )
    partition = np.array_equal(
        np.sort(np.concatenate(report.outer_folds)), np.arange(ds.n)
    )

    again = nested_cv(ds, method, plan)
    identical = json.dumps(report.to_dict(), sort_keys=True) == json.dumps(
        again.to_dict(), sort_keys=True
    )

    criterion(
        6,
        overlaps == 0 and cells_complete and partition and identical,
        f"25 cells, {overlaps} index overlaps across "
        "train/validation/calibration/test; outer folds partition all 100 "
        "rows; serialized reruns byte-identical",
    )


def test_criterion_7_kriging_exactness(criterion):
    grid = RasterGrid(0.0, 0.0, 10.0, 3, 3)
    centers = grid.cell_centers()
    values = 1.0 + 0.03 * centers[:, 0] + 0.01 * centers[:, 1]
    vg = Variogram(VariogramFamily.SPHERICAL, 0.0, 1.0, 40.0)
    surface, _ = ordinary_krige(centers, values, vg, grid)
    exact_err = float(np.max(np.abs(surface.values.ravel() - values)))

    gen = np.random.default_rng(707)
    pts = gen.uniform(0.0, 60.0, (12, 2))
    flat, _ = ordinary_krige(
        pts,
        np.full(12, 3.7),
        Variogram(VariogramFamily.SPHERICAL, 0.2, 0.8, 30.0),
        RasterGrid(0.0, 0.0, 10.0, 6, 6),
    )
    weight_err = float(np.max(np.abs(flat.values - 3.7)))

    two = RasterGrid(4.0, -1.0, 2.0, 1, 1)  # lone center at (5, 0)
    pred, var = ordinary_krige(
        np.array([[0.0, 0.0], [10.0, 0.0]]),
        np.array([2.0, 4.0]),
        Variogram(VariogramFamily.SPHERICAL, 0.5, 0.0, 25.0),
        two,
    )
    nugget_err = max(
        abs(float(pred.values[0, 0]) - 3.0),
        abs(float(var.values[0, 0]) - 0.75),
    )

    criterion(
        7,
        exact_err <= 1e-8 and weight_err <= 1e-8 and nugget_err <= 1e-8,
        f"zero-nugget interpolation err {exact_err:.2e}; constant-field "
        f"(weights sum to 1) err {weight_err:.2e}; pure-nugget 2-point "
        f"hand case err {nugget_err:.2e} (all tol 1e-8)",
    )


def test_criterion_8_benchmark_beats_constant_spread(criterion):
    t0 = time.perf_counter()
    ds = generate(SynthSpec(n=200, d=2, noise=NoiseKind.HETEROSCEDASTIC, seed=1))
    method = MethodSpec(
        MethodKind.BINNED_ENSEMBLE,
        HyperparameterGrid.from_mapping({"max_depth": [10]}),
        classifier=ClassifierSpec(ClassifierKind.RANDOM_FOREST),
        ensemble=default_ensemble_spec(),
    )
    report = nested_cv(ds, method, CVPlan(outer_k=5, inner_n=5, seed=0))

    # Constant-spread reference: same ensemble refit per outer fold gives
    # the center, a single training-residual sd gives the spread, and the
    # 19-level quantile path gives the score.
    levels = quantile_level_grid()
    z = norm.ppf(levels)
    rng = SeededRng(8)
    base_scores = []
    for i, fold in enumerate(report.outer_folds):
        mask = np.zeros(ds.n, dtype=bool)
        mask[fold] = True
        train = ds.subset(np.nonzero(~mask)[0])
        test = ds.subset(fold)
        model = fit_ensemble(
            train,
            default_ensemble_spec(),
            ClassifierSpec(ClassifierKind.RANDOM_FOREST),
            rng.derive("baseline", i),
        )
        sd = float(np.std(train.target - model.predict_mean(train.features)))
        for center, y in zip(model.predict_mean(test.features), test.target):
            curve = QuantileCurve(levels, center + sd * z)
            base_scores.append(crps_from_quantiles(curve, float(y)))
    baseline = float(np.mean(base_scores))

    stds = np.array([p.std for p in report.predictions])
    true_sd = 0.1 + 0.9 * ds.features[:, 0]
    corr = float(np.corrcoef(stds, true_sd)[0, 1])
    elapsed = time.perf_counter() - t0
    criterion(
        8,
        report.overall_crps < baseline and corr > 0.2 and elapsed < 300.0,
        f"mean CRPS {report.overall_crps:.4f} < constant-spread baseline "
        f"{baseline:.4f}; corr(predicted sd, true sd) {corr:.3f} > 0.2; "
        f"{elapsed:.0f}s",
    )


def test_criterion_9_variogram_parameter_recovery(criterion):
    truth = Variogram(VariogramFamily.SPHERICAL, 0.1, 1.0, 50.0)
    lags = (np.arange(12) + 0.5) * (100.0 / 12.0)
    records = [(float(h), float(truth.gamma(h)), 40) for h in lags]
    fitted = fit_variogram(records, VariogramFamily.SPHERICAL, max_dist=100.0)
    rel = max(
        abs(fitted.nugget - 0.1) / 0.1,
        abs(fitted.partial_sill - 1.0) / 1.0,
        abs(fitted.range_param - 50.0) / 50.0,
    )
    criterion(
        9,
        rel <= 0.05,
        f"spherical(0.1, 1.0, 50) recovered as ({fitted.nugget:.4f}, "
        f"{fitted.partial_sill:.4f}, {fitted.range_param:.2f}); worst rel "
        f"err {rel:.2%} (tol 5%)",
    )


def test_criterion_10_grid_sizes(criterion):
    rf, qr = default_rf_grid().size, default_qr_grid().size
    criterion(
        10,
        rf == 108 and qr == 12,
        f"default grids enumerate {rf} random-forest and {qr} "
        "quantile-regression combinations (required 108 and 12)",
    )
