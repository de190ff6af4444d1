import json
from datetime import datetime, timezone

import numpy as np
import pandas as pd
import pytest

from turbinewatch.config import TurbineConfig
from turbinewatch.errors import InsufficientDataError, SchemaError
from turbinewatch.models import UnderperformanceEvent
from turbinewatch.services.diagnose import (
    channel_summary,
    diagnose_event,
    pitch_vs_speed_comparison,
    reference_window,
    write_diagnosis_json,
)

from conftest import make_records

MARCH = 31 * 144


def sample_records(n, seed, start="2021-03-01T00:00:00Z"):
    rng = np.random.default_rng(seed)
    return make_records(
        n,
        start=start,
        wind_speed=rng.uniform(3.0, 15.0, n),
        pitch_angle=1.0 + rng.normal(0.0, 0.3, n),
        hydraulic_pressure=180.0 + rng.normal(0.0, 2.0, n),
    )


def event_between(start, end):
    return UnderperformanceEvent(
        start=start,
        end=end,
        alert_start=start,
        alert_end=end,
        peak_deficit_mwh=1.0,
        lost_energy_mwh=1.0,
        opportunity_cost=0.0,
        exceeding_steps=1,
    )


def test_resampled_reference_flags_almost_nothing():
    reference = sample_records(3000, seed=1)
    rng = np.random.default_rng(2)
    flagged = 0
    for _ in range(20):
        event = reference.iloc[rng.integers(0, len(reference), 90)]
        rows = pitch_vs_speed_comparison(event, reference, TurbineConfig())
        flagged += sum(r.exceeds for r in rows)
    assert flagged <= 2


def test_pitch_offset_bins_are_flagged():
    reference = sample_records(3000, seed=3)
    rng = np.random.default_rng(4)
    event = make_records(
        90,
        wind_speed=rng.uniform(7.0, 10.0, 90),
        pitch_angle=6.0 + rng.normal(0.0, 0.3, 90),
    )
    rows = pitch_vs_speed_comparison(event, reference, TurbineConfig())
    assert [(r.bin_lo, r.bin_hi) for r in rows] == [(7.0, 8.0), (8.0, 9.0), (9.0, 10.0)]
    assert all(r.exceeds for r in rows)
    assert sum(r.event_count for r in rows) == 90
    for row in rows:
        assert row.reference_q05 < row.reference_median < row.reference_q95


def test_bins_without_reference_have_no_band():
    reference = make_records(50, wind_speed=np.full(50, 5.5))
    event = make_records(5, wind_speed=np.array([5.2, 5.8, 20.5, 20.6, 20.7]), pitch_angle=np.full(5, 30.0))
    rows = pitch_vs_speed_comparison(event, reference, TurbineConfig())
    assert [r.bin_lo for r in rows] == [5.0, 20.0]
    high = rows[1]
    assert high.reference_count == 0 and high.reference_median is None
    assert not high.exceeds
    assert rows[0].exceeds


def test_comparison_ignores_record_order():
    reference = sample_records(1000, seed=5)
    event = sample_records(60, seed=6)
    forward = pitch_vs_speed_comparison(event, reference, TurbineConfig())
    shuffled = pitch_vs_speed_comparison(
        event.sample(frac=1.0, random_state=1), reference.sample(frac=1.0, random_state=2), TurbineConfig()
    )
    assert forward == shuffled


def test_comparison_errors():
    reference = sample_records(100, seed=7)
    with pytest.raises(InsufficientDataError):
        pitch_vs_speed_comparison(reference.iloc[:0], reference, TurbineConfig())
    with pytest.raises(SchemaError, match="pitch_angle"):
        pitch_vs_speed_comparison(reference.drop(columns=["pitch_angle"]), reference, TurbineConfig())


def test_hydraulic_drop_ranks_first():
    reference = sample_records(3000, seed=8)
    event = sample_records(90, seed=9)
    event["hydraulic_pressure"] = event["hydraulic_pressure"] - 10.0
    ranked = channel_summary(event, reference)
    assert [a.channel for a in ranked] == ["hydraulic_pressure", "pitch_angle"]
    assert ranked[0].z < -3.0
    assert abs(ranked[1].z) < 3.0
    assert ranked[0].reference_std == pytest.approx(reference["hydraulic_pressure"].std(ddof=1))


def test_constant_reference_channel_ranks_last():
    reference = sample_records(500, seed=10)
    reference["hydraulic_pressure"] = 180.0
    event = sample_records(50, seed=11)
    ranked = channel_summary(event, reference)
    assert ranked[-1].channel == "hydraulic_pressure"
    assert ranked[-1].z is None
    assert ranked[0].z is not None and np.isfinite(ranked[0].z)


def test_equal_scores_tie_break_on_name():
    reference = sample_records(500, seed=12)
    reference["pitch_angle"] = reference["hydraulic_pressure"]
    event = sample_records(50, seed=13)
    event["pitch_angle"] = event["hydraulic_pressure"]
    ranked = channel_summary(event, reference)
    assert ranked[0].z == ranked[1].z
    assert [a.channel for a in ranked] == ["hydraulic_pressure", "pitch_angle"]


def test_ranking_survives_affine_rescaling():
    reference = sample_records(2000, seed=14)
    event = sample_records(60, seed=15)
    event["pitch_angle"] = event["pitch_angle"] + 0.4
    before = channel_summary(event, reference)
    for frame in (reference, event):
        frame["hydraulic_pressure"] = frame["hydraulic_pressure"] * 14.5 - 3.0
    after = channel_summary(event, reference)
    assert [a.channel for a in after] == [a.channel for a in before]
    for a, b in zip(before, after):
        assert a.z == pytest.approx(b.z, rel=1e-9)


def test_reference_window_is_rest_of_month():
    records = sample_records(MARCH + 300, seed=16, start="2021-02-28T00:00:00Z")
    start = datetime(2021, 3, 16, 6, 0, tzinfo=timezone.utc)
    end = datetime(2021, 3, 16, 20, 50, tzinfo=timezone.utc)
    month_start, month_end, event_records, reference_records = reference_window(records, event_between(start, end))
    assert month_start == pd.Timestamp("2021-03-01T00:00:00Z")
    assert month_end == pd.Timestamp("2021-04-01T00:00:00Z")
    assert len(event_records) == 90
    assert len(reference_records) == MARCH - 90
    assert reference_records["timestamp"].min() == month_start
    assert not reference_records["timestamp"].between(pd.Timestamp(start), pd.Timestamp(end)).any()


def test_diagnose_event_report(tmp_path):
    records = sample_records(MARCH, seed=17)
    start = datetime(2021, 3, 10, 0, 0, tzinfo=timezone.utc)
    end = datetime(2021, 3, 10, 14, 50, tzinfo=timezone.utc)
    in_event = records["timestamp"].between(pd.Timestamp(start), pd.Timestamp(end))
    records.loc[in_event, "hydraulic_pressure"] -= 12.0
    report = diagnose_event(records, event_between(start, end), TurbineConfig())
    assert report.reference_start == datetime(2021, 3, 1, tzinfo=timezone.utc)
    assert report.reference_end == datetime(2021, 3, 31, 23, 50, tzinfo=timezone.utc)
    assert report.channels[0].channel == "hydraulic_pressure"
    assert report.pitch_bins

    path = tmp_path / "diagnosis.json"
    write_diagnosis_json([report], path)
    payload = json.loads(path.read_text())
    assert len(payload) == 1
    assert payload[0]["channels"][0]["channel"] == "hydraulic_pressure"
    assert {"bin_lo", "reference_q05", "event_median", "exceeds"} <= set(payload[0]["pitch_bins"][0])
