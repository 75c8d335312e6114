"""Metrics, CI aggregation, and the experiment orchestrator."""

import csv
import json
import math
import statistics
from dataclasses import replace

import numpy as np
import pytest

from _synth import benchmark_pool
from fairshift import (
    ConvergenceWarningFlag,
    DataError,
    DensityConfig,
    DomainError,
    ExperimentConfig,
    FairnessCriterion,
    FeatureMap,
    SealedLabels,
    ShiftConfig,
    TrainConfig,
    aggregate_ci,
    biased_split,
    build_density_info,
    evaluate,
    fit_fair_robust_shift,
    run_experiment,
    write_manifest,
)

EQ_OPP = FairnessCriterion.EQUALIZED_OPPORTUNITY


# -------------------------------------------------------------- evaluate


def test_evaluate_perfect_predictions_score_zero():
    y = np.array([1, 0, 1, 0, 1])
    a = np.array([0, 0, 1, 1, 1])
    report = evaluate(y.astype(float), y, a)
    assert report.error == 0.0
    assert report.deo == 0.0
    assert report.dp_gap is not None


def test_evaluate_matches_hand_counted_gap():
    # five true positives; group 1 predicted (1,1,0), group 0 predicted (1,0)
    predictions = np.array([1.0, 1.0, 0.0, 1.0, 0.0])
    truth = np.ones(5, dtype=int)
    attribute = np.array([1, 1, 1, 0, 0])
    report = evaluate(predictions, truth, attribute)
    assert report.tpr_1 == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert report.tpr_0 == pytest.approx(0.5, abs=1e-12)
    assert report.deo == pytest.approx(1.0 / 6.0, abs=1e-12)
    assert report.error == pytest.approx(0.4, abs=1e-12)
    assert report.deodds is None  # no negatives anywhere
    assert report.flags == []


def test_evaluate_constant_positive_classifier():
    rng = np.random.default_rng(3)
    truth = rng.integers(0, 2, 40)
    attribute = rng.integers(0, 2, 40)
    report = evaluate(np.ones(40), truth, attribute)
    assert report.tpr_0 == report.tpr_1 == 1.0
    assert report.deo == 0.0
    assert report.error == pytest.approx(float((truth == 0).mean()), abs=1e-12)
    assert report.deodds == 0.0


def test_evaluate_rates_average_probabilities():
    predictions = np.array([0.8, 0.4, 0.6, 0.2])
    truth = np.array([1, 0, 1, 0])
    attribute = np.array([0, 0, 1, 1])
    report = evaluate(predictions, truth, attribute)
    assert report.tpr_0 == pytest.approx(0.8, abs=1e-12)
    assert report.tpr_1 == pytest.approx(0.6, abs=1e-12)
    assert report.fpr_0 == pytest.approx(0.4, abs=1e-12)
    assert report.fpr_1 == pytest.approx(0.2, abs=1e-12)
    assert report.deo == pytest.approx(0.2, abs=1e-12)
    assert report.dp_gap == pytest.approx(0.2, abs=1e-12)
    assert report.deodds == pytest.approx(0.4, abs=1e-12)
    # thresholded labels all match here even though the gaps are nonzero
    assert report.error == 0.0


def test_evaluate_threshold_moves_error_not_gaps():
    predictions = np.array([0.8, 0.4, 0.6, 0.2])
    truth = np.array([1, 0, 1, 0])
    attribute = np.array([0, 0, 1, 1])
    low = evaluate(predictions, truth, attribute, threshold=0.5)
    high = evaluate(predictions, truth, attribute, threshold=0.7)
    assert high.error == pytest.approx(0.25, abs=1e-12)
    assert high.deo == low.deo
    assert high.dp_gap == low.dp_gap
    assert high.deodds == low.deodds


def test_evaluate_flags_group_without_positives():
    predictions = np.array([0.9, 0.1, 0.2, 0.3])
    truth = np.array([1, 0, 0, 0])
    attribute = np.array([0, 0, 1, 1])
    report = evaluate(predictions, truth, attribute)
    assert report.tpr_1 is None
    assert report.deo is None
    assert report.deodds is None
    assert report.dp_gap is not None
    assert f"{ConvergenceWarningFlag.UNDEFINED_TPR}_group_1" in report.flags


def test_evaluate_permutation_invariant():
    rng = np.random.default_rng(9)
    predictions = rng.random(60)
    truth = rng.integers(0, 2, 60)
    attribute = rng.integers(0, 2, 60)
    perm = rng.permutation(60)
    base = evaluate(predictions, truth, attribute).to_dict()
    shuffled = evaluate(predictions[perm], truth[perm], attribute[perm]).to_dict()
    for key, value in base.items():
        if key == "flags":
            assert shuffled[key] == value
        else:
            assert shuffled[key] == pytest.approx(value, abs=1e-12)


def test_evaluate_accepts_sealed_labels():
    predictions = np.array([0.8, 0.4, 0.6, 0.2])
    truth = np.array([1, 0, 1, 0])
    attribute = np.array([0, 0, 1, 1])
    direct = evaluate(predictions, truth, attribute)
    sealed = evaluate(predictions, SealedLabels(truth), attribute)
    assert direct.to_dict() == sealed.to_dict()


def test_evaluate_validates_alignment():
    with pytest.raises(DataError, match="align"):
        evaluate(np.ones(3), np.ones(4, dtype=int), np.zeros(3, dtype=int))
    with pytest.raises(DataError, match="nothing"):
        evaluate(np.ones(0), np.ones(0, dtype=int), np.zeros(0, dtype=int))


# ---------------------------------------------------------- aggregate_ci


def test_aggregate_ci_constant_values():
    mean, halfwidth = aggregate_ci([0.2, 0.2, 0.2])
    assert mean == pytest.approx(0.2, abs=1e-12)
    assert halfwidth == pytest.approx(0.0, abs=1e-12)


def test_aggregate_ci_hand_example():
    mean, halfwidth = aggregate_ci([0.1, 0.3])
    assert mean == pytest.approx(0.2, abs=1e-12)
    # sd = sqrt(0.02), halfwidth = 1.96 * sd / sqrt(2) = 0.196
    assert halfwidth == pytest.approx(0.196, abs=1e-12)


def test_aggregate_ci_single_value():
    assert aggregate_ci([0.5]) == (0.5, 0.0)


def test_aggregate_ci_matches_reimplementation():
    rng = np.random.default_rng(7)
    values = rng.normal(size=10)
    mean, halfwidth = aggregate_ci(values)
    assert mean == pytest.approx(statistics.fmean(values), abs=1e-12)
    expect = 1.96 * statistics.stdev(values) / math.sqrt(10)
    assert halfwidth == pytest.approx(expect, abs=1e-12)


def test_aggregate_ci_empty_raises():
    with pytest.raises(DataError):
        aggregate_ci([])


# ------------------------------------------------------ ExperimentConfig


def test_experiment_config_rejects_unknown_keys():
    with pytest.raises(DomainError, match="bogus"):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(DomainError, match="banana"):
        ExperimentConfig.from_dict({"train": {"banana": 2.0}})
    with pytest.raises(DomainError, match="kernel"):
        ExperimentConfig.from_dict({"density": {"kernel": "cosine"}})


def test_experiment_config_rejects_unknown_method():
    with pytest.raises(DomainError, match="teleport"):
        ExperimentConfig.from_dict({"methods": ["lr", "teleport"]})


def test_experiment_config_parses_nested_sections():
    cfg = ExperimentConfig.from_dict({
        "dataset_name": "adult",
        "settings": [[0, 1], [1.5, 3]],
        "repetitions": 4,
        "methods": ["lr", "fair_robust_shift"],
        "criterion": "demographic_parity",
        "density": {"bandwidth": 0.25, "epsilon": 0.02},
        "train": {"l2_strength": 0.5, "max_iters": 700},
        "jobs": 2,
    })
    assert cfg.settings == ((0.0, 1.0), (1.5, 3.0))
    assert cfg.criterion is FairnessCriterion.DEMOGRAPHIC_PARITY
    assert cfg.density.bandwidth == 0.25
    assert cfg.train.l2_strength == 0.5
    assert cfg.train.max_iters == 700
    assert cfg.jobs == 2


def test_experiment_config_validates_counts():
    with pytest.raises(DomainError, match="repetitions"):
        ExperimentConfig(repetitions=0)
    with pytest.raises(DomainError, match="setting"):
        ExperimentConfig(settings=())
    with pytest.raises(DomainError, match="jobs"):
        ExperimentConfig(jobs=0)


# -------------------------------------------------------- run_experiment


SMALL_CFG = ExperimentConfig(
    dataset_name="toy",
    settings=((1.0, 2.0),),
    repetitions=3,
    methods=("lr", "hardt"),
    train=TrainConfig(l2_strength=0.01),
    base_seed=11,
)


@pytest.fixture(scope="module")
def small_pool():
    return benchmark_pool(n=500, seed=3)


@pytest.fixture(scope="module")
def small_result(small_pool):
    return run_experiment(small_pool, SMALL_CFG)


def test_run_experiment_produces_full_grid(small_result):
    records = small_result.records
    assert len(records) == 3 * 2
    assert {r.method for r in records} == {"lr", "hardt"}
    assert {r.repetition for r in records} == {0, 1, 2}
    for r in records:
        assert r.failure is None
        assert r.report is not None
        assert r.converged is True
        assert (r.alpha, r.beta) == (1.0, 2.0)
        assert r.source_projection_mean is not None
        assert 0.0 <= r.report.error <= 1.0


def test_run_experiment_repetitions_differ(small_result):
    errors = [r.report.error for r in small_result.records if r.method == "lr"]
    assert len(set(errors)) > 1  # distinct splits, distinct scores


def test_run_experiment_parallel_matches_serial(small_pool, small_result):
    again = run_experiment(small_pool, replace(SMALL_CFG, jobs=2))
    assert len(again.records) == len(small_result.records)
    for r1, r2 in zip(small_result.records, again.records):
        assert (r1.method, r1.repetition) == (r2.method, r2.repetition)
        assert r1.report.error == r2.report.error
        assert r1.report.deo == r2.report.deo
        assert r1.seed == r2.seed


def test_aggregates_match_recomputation_from_csv(small_result, tmp_path):
    path = tmp_path / "results.csv"
    small_result.write_results_csv(str(path))
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(small_result.records)
    for agg in small_result.aggregates():
        errs = [float(r["error"]) for r in rows if r["method"] == agg.method]
        assert agg.n_reps == len(errs)
        assert agg.means["error"] == pytest.approx(statistics.fmean(errs),
                                                   abs=1e-12)
        width = 1.96 * statistics.stdev(errs) / math.sqrt(len(errs))
        assert agg.cis["error"] == pytest.approx(width, abs=1e-12)


def test_aggregate_csv_round_trips(small_result, tmp_path):
    path = tmp_path / "aggregate.csv"
    small_result.write_aggregate_csv(str(path))
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_method = {r["method"]: r for r in rows}
    assert set(by_method) == {"lr", "hardt"}
    for agg in small_result.aggregates():
        row = by_method[agg.method]
        assert float(row["error_mean"]) == agg.means["error"]
        assert float(row["deo_ci"]) == agg.cis["deo"]
        assert int(row["n_reps"]) == 3


def test_plotdata_structure(small_result, tmp_path):
    path = tmp_path / "plotdata.json"
    small_result.write_plotdata_json(str(path))
    with open(path) as fh:
        doc = json.load(fh)
    assert doc["format"] == "fairshift-plotdata"
    assert doc["version"] == 1
    assert "normal approximation" in doc["ci"]
    assert len(doc["settings"]) == 1
    block = doc["settings"][0]
    assert (block["alpha"], block["beta"]) == (1.0, 2.0)
    for name in ("lr", "hardt"):
        point = block["methods"][name]
        assert set(point) == {"error_mean", "error_ci", "deo_mean", "deo_ci",
                              "n_reps"}
        assert point["n_reps"] == 3


def test_run_experiment_records_cell_failures(small_pool, monkeypatch):
    def boom(*args, **kwargs):
        raise DataError("injected failure")

    monkeypatch.setattr("fairshift.evaluation.fit_hardt", boom)
    result = run_experiment(small_pool, replace(SMALL_CFG, repetitions=2))
    hardt = [r for r in result.records if r.method == "hardt"]
    assert len(hardt) == 2
    assert all(r.failure == "injected failure" for r in hardt)
    assert all(r.flags == ["failed"] for r in hardt)
    assert all(r.failure is None for r in result.records if r.method == "lr")
    agg = {a.method: a for a in result.aggregates()}
    assert agg["hardt"].means["error"] is None
    assert "no_successful_repetitions" in agg["hardt"].flags
    assert "failed_repetitions=2" in agg["hardt"].flags
    assert agg["lr"].means["error"] is not None


def test_single_repetition_ci_flagged(small_pool):
    result = run_experiment(small_pool, replace(SMALL_CFG, repetitions=1,
                                                methods=("lr",)))
    agg = result.aggregates()[0]
    assert agg.cis["error"] == 0.0
    assert ConvergenceWarningFlag.SINGLETON_CI in agg.flags


# --------------------------------------------------------- label sealing


def _fit_on_split(split, densities):
    cfg = TrainConfig(l2_strength=0.01, mu_tol=10.0, seed=5)
    fmap = FeatureMap.for_dataset(split.source)
    model, _ = fit_fair_robust_shift(split.source, split.target_unlabeled,
                                     densities, EQ_OPP, cfg, fmap)
    return model


def test_corrupting_sealed_labels_cannot_change_training():
    """Training only ever sees the unlabeled target: flipping every sealed
    label must reproduce the exact same model."""
    pool = benchmark_pool(n=400, seed=6)
    split = biased_split(pool, ShiftConfig(alpha=1.0, beta=2.0, seed=2))
    densities = build_density_info(split.source, split.target_unlabeled,
                                   DensityConfig())
    before = _fit_on_split(split, densities)
    split.target_labels_sealed._values[:] = 1 - split.target_labels_sealed._values
    after = _fit_on_split(split, densities)
    np.testing.assert_array_equal(before.params.theta, after.params.theta)
    assert before.params.lambda_0 == after.params.lambda_0
    assert before.params.lambda_1 == after.params.lambda_1
    assert before.params.mu == after.params.mu


def test_unseal_returns_a_copy():
    sealed = SealedLabels(np.array([1, 0, 1]))
    out = sealed.unseal()
    out[:] = 0
    np.testing.assert_array_equal(sealed.unseal(), [1, 0, 1])


# -------------------------------------------------------------- manifest


def test_write_manifest_contents(tmp_path):
    path = tmp_path / "manifest.json"
    payload = {"repetitions": 10, "methods": ["lr"]}
    write_manifest(str(path), payload, base_seed=4, extra={"rows": 123})
    with open(path) as fh:
        doc = json.load(fh)
    assert doc["config"] == payload
    assert doc["base_seed"] == 4
    assert doc["rows"] == 123
    assert set(doc["versions"]) == {"fairshift", "numpy", "scipy", "python"}
    assert len(doc["config_hash"]) == 64


def test_manifest_hash_ignores_key_order(tmp_path):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    write_manifest(str(p1), {"x": 1, "y": 2}, base_seed=0)
    write_manifest(str(p2), {"y": 2, "x": 1}, base_seed=0)
    h1 = json.loads(p1.read_text())["config_hash"]
    h2 = json.loads(p2.read_text())["config_hash"]
    assert h1 == h2
    write_manifest(str(p1), {"x": 1, "y": 3}, base_seed=0)
    assert json.loads(p1.read_text())["config_hash"] != h1
