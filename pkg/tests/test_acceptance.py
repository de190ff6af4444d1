from datetime import timedelta

import numpy as np
import pandas as pd
import pytest

from turbinewatch.config import Settings, TurbineConfig
from turbinewatch.models import FeatureSet
from turbinewatch.presets import INCIDENT_HOURS, INCIDENT_START, reference_year
from turbinewatch.services.monitor import (
    PowerTrack,
    event_window_share,
    metric_frame,
    monitor,
    rolling_energy_residual,
    track_for,
)
from turbinewatch.services.preprocess import clean
from turbinewatch.services.regressors import build_feature_matrix, evaluate, fit_model, train_test_split
from turbinewatch.services.simulator import generate

NOISE_KW = 50.0


@pytest.fixture(scope="module")
def year_model(reference):
    records, _ = reference
    quarter = clean(records.iloc[: 90 * 144], TurbineConfig()).clean
    return fit_model("gbm", FeatureSet.V, quarter, Settings())


def test_month_models_reach_the_noise_floor(reference):
    records, _ = reference
    january = clean(records.iloc[: 31 * 144], TurbineConfig()).clean
    train, test = train_test_split(january, 0.7, seed=42)
    settings = Settings()
    features = build_feature_matrix(test, FeatureSet.VDT)
    targets = test["power"].to_numpy()
    scores = {}
    for algorithm in ("gbm", "random_forest", "knn", "bin_curve"):
        model = fit_model(algorithm, FeatureSet.VDT, train, settings)
        scores[algorithm] = evaluate(model, features, targets)
    for algorithm in ("gbm", "random_forest"):
        rmse, r2 = scores[algorithm]
        # cleaning trims the far noise tails, so the floor sits a little under sigma
        assert 0.95 * NOISE_KW <= rmse <= 1.6 * NOISE_KW
        assert r2 >= 0.99
    assert scores["knn"][0] > scores["gbm"][0]
    assert scores["bin_curve"][0] > scores["gbm"][0]


def test_constant_rated_power_integrates_exactly():
    n = 144
    track = PowerTrack(
        timestamps=pd.Series(pd.date_range("2021-01-01T00:00:00Z", periods=n, freq="10min")),
        actual=np.full(n, 3300.0),
        expected=np.zeros(n),
        step_valid=np.ones(n, dtype=bool),
    )
    series = rolling_energy_residual(track, horizon=24.0)
    last = series.frame.iloc[-1]
    assert last["rolling_energy_kwh"] == pytest.approx(79_200.0, rel=1e-9)
    assert last["rolling_residual_mwh"] == pytest.approx(79.2, rel=1e-9)


def test_metric_identities_over_a_million_steps():
    rng = np.random.default_rng(1)
    n = 1_000_000
    track = PowerTrack(
        timestamps=pd.Series(pd.date_range("2021-01-01T00:00:00Z", periods=n, freq="10min")),
        actual=rng.uniform(-3300.0, 3300.0, n),
        expected=rng.uniform(-3300.0, 3300.0, n),
        step_valid=np.ones(n, dtype=bool),
    )
    frame = metric_frame(rolling_energy_residual(track, horizon=1 / 6))
    assert np.array_equal(frame["m2_kw"], frame["m1_kw"].abs())
    ok = frame["m3"].notna()
    assert ok.mean() > 0.99
    assert np.array_equal(frame.loc[ok, "m4"], frame.loc[ok, "m3"].abs())
    np.testing.assert_allclose(frame.loc[ok, "m5"], frame.loc[ok, "m3"] + 1.0, rtol=1e-12, atol=1e-12)


def test_incident_is_detected_once_with_its_energy(reference, incident, year_model):
    ref_records, _ = reference
    records, truth = incident
    config = TurbineConfig()
    result = monitor(
        track_for(records, year_model, config), config, reference=track_for(ref_records, year_model, config)
    )
    injected_mwh = truth.total_deficit_kwh / 1000.0
    fault_end = INCIDENT_START + timedelta(hours=INCIDENT_HOURS)
    events = result.report.events

    overlapping = [e for e in events if e.start <= fault_end and e.end >= INCIDENT_START]
    assert len(overlapping) == 1
    event = overlapping[0]
    assert abs(event.start - INCIDENT_START) <= timedelta(hours=2)
    # the event end is the last faulted step, one step before the fault window closes
    assert abs(event.end - (fault_end - timedelta(minutes=10))) <= timedelta(hours=2)
    assert event.lost_energy_mwh == pytest.approx(injected_mwh, rel=0.15)
    assert event.peak_deficit_mwh > result.threshold
    assert result.report.threshold_source == "reference"

    # any other alert is a tail exceedance of the reference quantile, not a second fault
    others = [e for e in events if e is not event]
    for other in others:
        assert other.peak_deficit_mwh < 2.0 * result.threshold, other
        assert other.lost_energy_mwh < 0.25 * injected_mwh, other
    assert event_window_share(result.series, others) <= 0.005

    # storm stops above cut-out are expected, never underperformance
    stormy = records.loc[records["wind_speed"] >= config.cut_out, "timestamp"]
    for ts in stormy:
        assert not any(e.start <= ts <= e.end for e in events), ts


def test_fault_free_year_rarely_alerts(reference, year_model):
    ref_records, _ = reference
    other, _ = generate(reference_year(seed=8))
    result = monitor(
        track_for(other, year_model, TurbineConfig()),
        TurbineConfig(),
        reference=track_for(ref_records, year_model, TurbineConfig()),
    )
    assert event_window_share(result.series, result.report.events) <= 0.005
