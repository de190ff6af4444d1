import logging
import math
import random

import joblib
import numpy as np
import pandas as pd
import pytest

from turbinewatch.config import Settings
from turbinewatch.errors import InsufficientDataError, ModelError
from turbinewatch.models import FeatureSet, ModelReport, ModelRow, ScadaRecord
from turbinewatch.presets import direction_month
from turbinewatch.services import regressors
from turbinewatch.services.regressors import (
    FittedModel,
    all_candidates,
    build_feature_matrix,
    build_features,
    evaluate,
    fit_bin_curve,
    fit_gbm,
    fit_knn,
    fit_model,
    fit_random_forest,
    load_model,
    register_algorithm,
    save_model,
    select_model,
    train_test_split,
    write_report_csv,
)
from turbinewatch.services.simulator import generate

from conftest import make_records


def wrap(estimator, algorithm="test", feature_set=FeatureSet.V):
    return FittedModel(algorithm=algorithm, feature_set=feature_set, estimator=estimator, seed=0, rated_power=3300.0)


def cube_grid(n=1000):
    v = np.linspace(3.0, 12.0, n)
    return make_records(n, wind_speed=v, power=v**3)


def holdout_rmse(algorithm, records, settings):
    train, test = train_test_split(records, 0.7, seed=1)
    model = fit_model(algorithm, FeatureSet.V, train, settings)
    rmse, _ = evaluate(model, build_feature_matrix(test, FeatureSet.V), test["power"].to_numpy())
    return rmse


def test_build_features_trig_encoding():
    record = ScadaRecord(
        timestamp="2021-01-01T00:00:00Z", wind_speed=8.0, wind_dir=90.0, air_temp=10.0, power=1.0, pitch_angle=1.0
    )
    vdt = build_features(record, FeatureSet.VDT)
    assert vdt == pytest.approx([8.0, 1.0, 0.0, 10.0], abs=1e-12)
    assert build_features({"wind_speed": 5.0, "wind_dir": 0.0}, FeatureSet.VD).tolist() == [5.0, 0.0, 1.0]
    assert build_features(record, FeatureSet.V).tolist() == [8.0]

    near_north = build_features({"wind_speed": 8.0, "wind_dir": 359.9}, FeatureSet.VD)
    past_north = build_features({"wind_speed": 8.0, "wind_dir": 0.1}, FeatureSet.VD)
    assert np.max(np.abs(near_north - past_north)) < 0.004


def test_feature_matrix_matches_rows_and_checks_channels():
    records = make_records(3, wind_dir=np.array([0.0, 90.0, 180.0]), air_temp=np.array([1.0, 2.0, 3.0]))
    matrix = build_feature_matrix(records, FeatureSet.VDT)
    assert matrix.shape == (3, 4)
    for i, row in enumerate(records.to_dict("records")):
        assert matrix[i] == pytest.approx(build_features(row, FeatureSet.VDT))
    with pytest.raises(ModelError, match="air_temp"):
        build_feature_matrix(records.drop(columns=["air_temp"]), FeatureSet.VDT)


def test_split_sizes_determinism_and_disjointness():
    records = make_records(1000)
    train, test = train_test_split(records, 0.7, seed=5)
    assert (len(train), len(test)) == (700, 300)
    assert set(train.index).isdisjoint(test.index)
    assert sorted(set(train.index) | set(test.index)) == list(range(1000))
    again, _ = train_test_split(records, 0.7, seed=5)
    assert list(again.index) == list(train.index)
    other, _ = train_test_split(records, 0.7, seed=6)
    assert list(other.index) != list(train.index)
    with pytest.raises(InsufficientDataError):
        train_test_split(make_records(9), 0.7, seed=1)


def test_gbm_constant_target_and_cube_accuracy(settings):
    features = np.linspace(3, 12, 200).reshape(-1, 1)
    model = wrap(fit_gbm(features, np.full(200, 1650.0), settings, seed=1))
    assert np.allclose(model.predict(features), 1650.0)
    assert holdout_rmse("gbm", cube_grid(), settings) < 0.02 * 12.0**3


def test_gbm_full_sample_loss_never_increases():
    settings = Settings.model_validate({"models": {"gbm": {"subsample": 1.0, "n_estimators": 200}}})
    records = cube_grid(500)
    rng = np.random.default_rng(0)
    records["power"] = records["power"] + rng.normal(0, 20, len(records))
    model = fit_model("gbm", FeatureSet.V, records, settings)
    losses = model.stage_losses
    assert len(losses) == 201
    assert np.all(np.diff(losses) <= 1e-9 * losses[0])
    assert losses[-1] < losses[0]


def test_single_unbagged_tree_memorises():
    settings = Settings.model_validate(
        {
            "models": {
                "random_forest": {
                    "n_estimators": 1,
                    "bootstrap": False,
                    "max_features": "all",
                    "min_samples_leaf": 1,
                }
            }
        }
    )
    records = cube_grid(300)
    model = fit_model("random_forest", FeatureSet.V, records, settings)
    assert model.train_rmse == 0.0


def test_random_forest_constant_and_cube(settings):
    features = np.linspace(3, 12, 100).reshape(-1, 1)
    model = wrap(fit_random_forest(features, np.full(100, 1650.0), settings, seed=2))
    assert np.allclose(model.predict(features), 1650.0)
    assert holdout_rmse("random_forest", cube_grid(), settings) < 0.05 * 12.0**3


def test_too_few_rows_for_trees(settings):
    with pytest.raises(InsufficientDataError):
        fit_gbm(np.ones((20, 1)), np.ones(20), settings, seed=0)


def test_knn_recall_global_mean_and_hand_example():
    features = np.array([[0.0], [1.0], [2.0], [3.0], [10.0]])
    targets = np.array([0.0, 10.0, 20.0, 30.0, 100.0])

    one = Settings.model_validate({"models": {"knn": {"k": 1}}})
    model = wrap(fit_knn(features, targets, one, seed=0))
    assert model.predict(features).tolist() == targets.tolist()

    everyone = Settings.model_validate({"models": {"knn": {"k": 5}}})
    model = wrap(fit_knn(features, targets, everyone, seed=0))
    assert np.allclose(model.predict(np.array([[-4.0], [50.0]])), targets.mean())

    three = Settings.model_validate({"models": {"knn": {"k": 3}}})
    model = wrap(fit_knn(features, targets, three, seed=0))
    assert model.predict(np.array([[1.2]]))[0] == pytest.approx(10.0)

    with pytest.raises(ModelError):
        fit_knn(features, targets, Settings.model_validate({"models": {"knn": {"k": 6}}}), seed=0)


def test_knn_ties_go_to_lower_training_index():
    features = np.array([[0.0], [2.0], [4.0]])
    one = Settings.model_validate({"models": {"knn": {"k": 1}}})
    model = wrap(fit_knn(features, np.array([1.0, 2.0, 3.0]), one, seed=0))
    assert model.predict(np.array([[1.0], [3.0]])).tolist() == [1.0, 2.0]


def test_knn_drops_constant_feature(caplog):
    features = np.column_stack([np.arange(10.0), np.full(10, 4.0)])
    one = Settings.model_validate({"models": {"knn": {"k": 1}}})
    with caplog.at_level(logging.WARNING):
        model = wrap(fit_knn(features, np.arange(10.0) * 2, one, seed=0))
    assert "zero-variance" in caplog.text
    assert model.predict(np.array([[3.1, 99.0]]))[0] == 6.0


def test_bin_curve_interpolates_between_centres(settings):
    features = np.array([[0.2], [0.5], [0.8], [1.5], [2.5]])
    targets = np.array([900.0, 1000.0, 1100.0, 2000.0, 2200.0])
    model = wrap(fit_bin_curve(features, targets, settings, seed=0))
    assert model.predict(np.array([[0.5]]))[0] == 1000.0
    assert model.predict(np.array([[1.0]]))[0] == pytest.approx(1500.0)
    assert model.predict(np.array([[9.0]]))[0] == 2200.0
    assert model.predict(np.array([[0.0]]))[0] == 1000.0
    with pytest.raises(InsufficientDataError):
        fit_bin_curve(np.array([[0.5], [0.6]]), np.array([1.0, 2.0]), settings, seed=0)


def test_predictions_are_clamped(settings):
    features = np.array([[0.5], [1.5]])
    model = wrap(fit_bin_curve(features, np.array([-9000.0, 9000.0]), settings, seed=0))
    assert model.predict(features).tolist() == [-3300.0, 4950.0]


def test_evaluate_perfect_mean_and_constant(settings):
    features = np.array([[0.5], [1.5], [2.5]])
    targets = np.array([10.0, 20.0, 30.0])
    model = wrap(fit_bin_curve(features, targets, settings, seed=0))
    assert evaluate(model, features, targets) == (0.0, 1.0)

    mean_model = wrap(fit_bin_curve(features, np.full(3, 20.0), settings, seed=0))
    rmse, r2 = evaluate(mean_model, features, targets)
    assert r2 == pytest.approx(0.0)
    assert rmse == pytest.approx(math.sqrt(200.0 / 3.0))

    rmse, r2 = evaluate(model, features, np.full(3, 5.0))
    assert r2 is None
    assert rmse > 0
    with pytest.raises(InsufficientDataError):
        evaluate(model, np.empty((0, 1)), np.empty(0))


@pytest.mark.parametrize("algorithm", ["gbm", "random_forest", "bin_curve"])
def test_tree_and_bin_predictions_scale_with_targets(algorithm, fast_settings):
    records = cube_grid(400)
    doubled = records.assign(power=records["power"] * 2.0)
    base = fit_model(algorithm, FeatureSet.V, records, fast_settings)
    scaled = fit_model(algorithm, FeatureSet.V, doubled, fast_settings)
    features = build_feature_matrix(records, FeatureSet.V)
    np.testing.assert_allclose(scaled.predict(features), 2.0 * base.predict(features), rtol=1e-9, atol=1e-6)


@pytest.mark.parametrize("algorithm", ["gbm", "random_forest", "knn", "bin_curve"])
def test_fits_are_bit_reproducible(algorithm, fast_settings, month):
    records = month[0].iloc[:1500]
    first = fit_model(algorithm, FeatureSet.VDT, records, fast_settings)
    second = fit_model(algorithm, FeatureSet.VDT, records, fast_settings)
    features = build_feature_matrix(records, FeatureSet.VDT)
    assert np.array_equal(first.predict(features), second.predict(features))


def test_registry_rejects_duplicates(monkeypatch):
    monkeypatch.setattr(regressors, "_FITTERS", dict(regressors._FITTERS))
    with pytest.raises(ModelError):
        register_algorithm("gbm", regressors.fit_gbm)
    register_algorithm("extra", regressors.fit_bin_curve)
    assert regressors.registered_algorithms()[-1] == "extra"
    assert ("extra", FeatureSet.VDT) in all_candidates()


class ConstantRegressor:
    def __init__(self, value):
        self.value = value

    def predict(self, features):
        return np.full(len(features), self.value)


def test_selection_tie_break_is_order_independent(monkeypatch, settings):
    settings = settings.model_copy(update={"n_jobs": 1})
    monkeypatch.setattr(regressors, "_FITTERS", dict(regressors._FITTERS))
    register_algorithm("zz_const", lambda x, y, s, seed: ConstantRegressor(100.0))
    register_algorithm("aa_const", lambda x, y, s, seed: ConstantRegressor(100.0))
    register_algorithm("worse", lambda x, y, s, seed: ConstantRegressor(0.0))
    records = make_records(100, wind_speed=np.linspace(0, 10, 100), power=np.full(100, 100.0))
    train, test = train_test_split(records, 0.7, seed=1)

    candidates = [(a, fs) for a in ("zz_const", "aa_const", "worse", "bin_curve") for fs in FeatureSet]
    reports = []
    for seed in range(3):
        shuffled = list(candidates)
        random.Random(seed).shuffle(shuffled)
        reports.append(select_model(shuffled, train, test, settings).report)
    first = reports[0]
    assert all(r == first for r in reports[1:])
    # bin_curve ties with the constants at zero error and wins on the fixed order
    assert (first.best.algorithm, first.best.feature_set) == ("bin_curve", FeatureSet.V)
    names = [(row.algorithm, row.feature_set.value) for row in first.rows]
    assert names.index(("aa_const", "V")) < names.index(("zz_const", "V"))
    assert names[-1][0] == "worse"


def test_failed_candidates_are_skipped(monkeypatch, settings):
    settings = settings.model_copy(update={"n_jobs": 1})
    monkeypatch.setattr(regressors, "_FITTERS", dict(regressors._FITTERS))

    def broken(x, y, s, seed):
        raise RuntimeError("boom")

    register_algorithm("broken", broken)
    records = make_records(100, wind_speed=np.linspace(0, 10, 100))
    train, test = train_test_split(records, 0.7, seed=1)
    selection = select_model([("broken", FeatureSet.V), ("bin_curve", FeatureSet.V)], train, test, settings)
    assert [r.algorithm for r in selection.report.rows] == ["bin_curve"]
    with pytest.raises(ModelError, match="every candidate"):
        select_model([("broken", FeatureSet.V)], train, test, settings)


def test_direction_modulated_data_prefers_direction_features(fast_settings):
    records, _ = generate(direction_month())
    train, test = train_test_split(records, 0.7, seed=4)
    candidates = [(a, fs) for a in ("gbm", "random_forest") for fs in FeatureSet]
    selection = select_model(candidates, train, test, fast_settings)
    assert selection.report.best.feature_set in (FeatureSet.VD, FeatureSet.VDT)
    by_key = {(r.algorithm, r.feature_set): r.rmse_kw for r in selection.report.rows}
    assert by_key[("gbm", FeatureSet.VDT)] < by_key[("gbm", FeatureSet.V)]


def test_model_blob_round_trip(tmp_path, fast_settings, month):
    records = month[0].iloc[:1000]
    model = fit_model("gbm", FeatureSet.VD, records, fast_settings)
    path = tmp_path / "model.joblib"
    save_model(model, path)
    loaded = load_model(path)
    assert (loaded.algorithm, loaded.feature_set, loaded.seed) == ("gbm", FeatureSet.VD, model.seed)
    assert np.array_equal(loaded.predict_records(records), model.predict_records(records))

    joblib.dump({"format_version": 99}, path)
    with pytest.raises(ModelError, match="format version"):
        load_model(path)
    with pytest.raises(ModelError, match="not found"):
        load_model(tmp_path / "missing.joblib")


def test_report_csv_format(tmp_path):
    report = ModelReport(
        rows=[
            ModelRow(algorithm="random_forest", feature_set=FeatureSet.VDT, rmse_kw=67.1, r2=0.997),
            ModelRow(algorithm="gbm", feature_set=FeatureSet.VDT, rmse_kw=68.1, r2=None),
        ]
    )
    path = tmp_path / "report.csv"
    write_report_csv(report, path)
    assert path.read_text().splitlines() == [
        "algorithm,feature_set,rmse_kw,r2,selected",
        "random_forest,VDT,67.100,0.997000,1",
        "gbm,VDT,68.100,undefined,0",
    ]
    table = pd.read_csv(path)
    assert table["selected"].sum() == 1
