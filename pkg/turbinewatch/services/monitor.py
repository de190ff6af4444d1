from __future__ import annotations

import json
import logging
import math
import threading
from collections import deque
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..config import TurbineConfig
from ..errors import ConfigError, InsufficientDataError, TurbineWatchError
from ..models import DataQualityFlag, EventReport, MetricVector, UnderperformanceEvent
from ..telemetry import EVENTS_DETECTED, count_records
from ..utils.timegrid import STEP, STEPS_PER_HOUR, format_utc, grid_positions, steps_for_hours
from .regressors import FittedModel


logger = logging.getLogger(__name__)

# scales a median absolute deviation to a normal standard deviation
MAD_SCALE = 1.4826
SPAN_PENALTY_SIGMAS = 3.0


def step_energy(power: np.ndarray) -> np.ndarray:
    return np.asarray(power, dtype=float) / STEPS_PER_HOUR


@dataclass(frozen=True)
class PowerTrack:
    timestamps: pd.Series
    actual: np.ndarray
    expected: np.ndarray
    step_valid: np.ndarray


def predict_expected(
    model: FittedModel, records: pd.DataFrame, cut_out: Optional[float] = None
) -> np.ndarray:
    expected = model.predict_records(records)
    if cut_out is None:
        return expected
    # the turbine is parked at or above cut-out
    stopped = records["wind_speed"].to_numpy(dtype=float) >= cut_out
    if stopped.any():
        logger.info("%d steps at or above cut-out %g m/s expect 0 kW", int(stopped.sum()), cut_out)
        expected = np.where(stopped, 0.0, expected)
    return expected


def track_for(
    records: pd.DataFrame, model: FittedModel, config: Optional[TurbineConfig] = None
) -> PowerTrack:
    config = config or TurbineConfig()
    expected = predict_expected(model, records, config.cut_out)
    actual = records["power"].to_numpy(dtype=float)
    # fault-logged steps are known stoppages, not unexplained losses
    valid = (records["status_code"].to_numpy() == 0) & np.isfinite(actual) & np.isfinite(expected)
    return PowerTrack(
        timestamps=records["timestamp"].reset_index(drop=True),
        actual=actual,
        expected=expected,
        step_valid=valid,
    )


@dataclass(frozen=True)
class ResidualSeries:
    frame: pd.DataFrame
    origin: pd.Timestamp
    horizon_hours: float
    steps: int
    positions: np.ndarray
    grid_step_residual: np.ndarray
    grid_step_valid: np.ndarray
    grid_rolling: np.ndarray

    @property
    def valid_residuals(self) -> np.ndarray:
        values = self.frame["rolling_residual_mwh"].to_numpy(dtype=float)
        return values[self.frame["valid"].to_numpy()]

    def timestamp_at(self, position: int) -> pd.Timestamp:
        return self.origin + STEP * int(position)


def _window_sums(values: np.ndarray, steps: int) -> np.ndarray:
    prefix = np.concatenate([[0.0], np.cumsum(values)])
    lagged = np.concatenate([np.zeros(steps), prefix[:-steps]])[: len(values) + 1]
    return prefix[1:] - lagged[1:]


def rolling_energy_residual(
    track: PowerTrack, horizon: float, min_coverage: float = 0.9
) -> ResidualSeries:
    """Trailing-window energy residual E - E_exp over ``horizon`` hours.

    The window ending at step t covers (t - horizon, t]. It counts as valid
    once at least ``min_coverage`` of its steps hold a valid record.
    """
    steps = steps_for_hours(horizon)
    if steps < 1:
        raise ConfigError(f"horizon {horizon} h is shorter than one 10-minute step")
    if len(track.timestamps) == 0:
        raise InsufficientDataError("no records to monitor")

    origin = track.timestamps.iloc[0]
    pos = grid_positions(track.timestamps, origin)
    n_grid = int(pos[-1]) + 1

    energy = step_energy(track.actual)
    expected_energy = step_energy(track.expected)
    step_res = np.where(track.step_valid, energy - expected_energy, 0.0)

    grid_res = np.zeros(n_grid)
    grid_valid = np.zeros(n_grid, dtype=bool)
    grid_energy = np.zeros(n_grid)
    grid_expected = np.zeros(n_grid)
    grid_res[pos] = step_res
    grid_valid[pos] = track.step_valid
    grid_energy[pos] = np.where(track.step_valid, energy, 0.0)
    grid_expected[pos] = np.where(track.step_valid, expected_energy, 0.0)

    counts = _window_sums(grid_valid.astype(float), steps)
    needed = math.ceil(min_coverage * steps - 1e-9)
    window_ok = counts >= needed
    rolling = np.where(window_ok, _window_sums(grid_res, steps) / 1000.0, np.nan)
    rolling_energy = np.where(window_ok, _window_sums(grid_energy, steps), np.nan)
    rolling_expected = np.where(window_ok, _window_sums(grid_expected, steps), np.nan)

    frame = pd.DataFrame(
        {
            "timestamp": track.timestamps,
            "power": track.actual,
            "expected": track.expected,
            "energy_kwh": energy,
            "expected_energy_kwh": expected_energy,
            "step_valid": track.step_valid,
            "rolling_residual_mwh": rolling[pos],
            "rolling_energy_kwh": rolling_energy[pos],
            "rolling_expected_kwh": rolling_expected[pos],
            "coverage": counts[pos] / steps,
            "valid": window_ok[pos],
        }
    )
    count_records("monitor", "window_valid", int(window_ok[pos].sum()))
    count_records("monitor", "window_invalid", int((~window_ok[pos]).sum()))
    return ResidualSeries(
        frame=frame,
        origin=origin,
        horizon_hours=horizon,
        steps=steps,
        positions=pos,
        grid_step_residual=grid_res,
        grid_step_valid=grid_valid,
        grid_rolling=rolling,
    )


def compute_metrics(
    power: float, expected: float, energy: float, expected_energy: float, cutoff: float = 1.0
) -> MetricVector:
    m1 = power - expected
    power_ok = abs(expected) >= cutoff
    energy_ok = abs(expected_energy) >= cutoff
    m3 = m1 / expected if power_ok else None
    return MetricVector(
        m1=m1,
        m2=abs(m1),
        m3=m3,
        m4=abs(m3) if m3 is not None else None,
        m5=power / expected if power_ok else None,
        m6=energy / expected_energy if energy_ok else None,
        power_ratio_valid=power_ok,
        energy_ratio_valid=energy_ok,
    )


def metric_frame(series: ResidualSeries, cutoff: float = 1.0) -> pd.DataFrame:
    f = series.frame
    p = f["power"].to_numpy(dtype=float)
    pe = f["expected"].to_numpy(dtype=float)
    e = f["rolling_energy_kwh"].to_numpy(dtype=float)
    ee = f["rolling_expected_kwh"].to_numpy(dtype=float)
    m1 = p - pe
    power_ok = np.abs(pe) >= cutoff
    energy_ok = np.isfinite(ee) & (np.abs(np.nan_to_num(ee)) >= cutoff)
    with np.errstate(divide="ignore", invalid="ignore"):
        m3 = np.where(power_ok, m1 / pe, np.nan)
        m5 = np.where(power_ok, p / pe, np.nan)
        m6 = np.where(energy_ok, e / ee, np.nan)
    return pd.DataFrame(
        {
            "timestamp": f["timestamp"],
            "m1_kw": m1,
            "m2_kw": np.abs(m1),
            "m3": m3,
            "m4": np.abs(m3),
            "m5": m5,
            "m6": m6,
        }
    )


def min_history(alert_quantile: float) -> int:
    return int(math.ceil(1.0 / alert_quantile - 1e-9))


def derive_threshold(residuals: np.ndarray, alert_quantile: float) -> float:
    values = np.asarray(residuals, dtype=float)
    values = np.abs(values[np.isfinite(values)])
    needed = min_history(alert_quantile)
    if len(values) < needed:
        raise InsufficientDataError(
            f"threshold at quantile {alert_quantile} needs {needed} valid residuals, got {len(values)}"
        )
    return float(np.quantile(values, 1.0 - alert_quantile))


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(s), int(e) - 1) for s, e in zip(edges[::2], edges[1::2])]


def _merge_runs(runs: List[Tuple[int, int]], merge_steps: float) -> List[Tuple[int, int]]:
    merged: List[Tuple[int, int]] = []
    for start, end in runs:
        if merged and (start - merged[-1][1] - 1) < merge_steps:
            merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))
    return merged


def _deficit_span(values: np.ndarray, penalty: float) -> Optional[Tuple[int, int]]:
    # Kadane over penalised deficits
    gains = -values - penalty
    best, best_span = 0.0, None
    running, start = 0.0, 0
    for i, gain in enumerate(gains):
        if running <= 0.0:
            running, start = gain, i
        else:
            running += gain
        if running > best:
            best, best_span = running, (start, i)
    return best_span


def _localise(
    series: ResidualSeries, run: Tuple[int, int], threshold: float, lower: int
) -> Tuple[int, int]:
    """Grid span of the energy deficit that produced an alert run."""
    first = max(lower, run[0] - series.steps + 1, 0)
    last = run[1]
    values = series.grid_step_residual[first : last + 1]
    valid = series.grid_step_valid[first : last + 1]
    if valid.any():
        scatter = np.median(np.abs(values[valid] - np.median(values[valid])))
    else:
        scatter = 0.0
    penalty = max(SPAN_PENALTY_SIGMAS * MAD_SCALE * scatter, threshold * 1000.0 / series.steps)
    span = _deficit_span(values, penalty)
    if span is not None:
        return first + span[0], first + span[1]
    # fall back to the window behind the deepest point of the run
    rolling = series.grid_rolling[run[0] : run[1] + 1]
    deepest = run[0] + int(np.nanargmin(rolling))
    return max(first, deepest - series.steps + 1), deepest


def detect_events(
    series: ResidualSeries,
    threshold: float,
    merge_gap_hours: float = 1.0,
    energy_price: float = 0.0,
) -> List[UnderperformanceEvent]:
    """Underperformance events, sorted by start.

    An alert run is a maximal stretch of steps whose rolling residual is
    negative and at or below -threshold. Runs separated by less than ``merge_gap_hours`` are
    merged. Each run is then mapped back to the span of step deficits that
    caused it. Lost energy is the deficit summed over that span, floored at
    the run's peak rolling deficit.
    """
    if threshold < 0:
        raise ConfigError(f"threshold must be non-negative, got {threshold}")
    rolling = series.grid_rolling
    with np.errstate(invalid="ignore"):
        exceeding = np.isfinite(rolling) & (rolling <= -threshold) & (rolling < 0)
    runs = _merge_runs(_runs(exceeding), merge_gap_hours * STEPS_PER_HOUR)

    events: List[UnderperformanceEvent] = []
    lower = 0
    for run in runs:
        start, end = _localise(series, run, threshold, lower)
        lower = end + 1
        peak = max(-float(np.nanmin(rolling[run[0] : run[1] + 1])), 0.0)
        lost = max(-float(series.grid_step_residual[start : end + 1].sum()) / 1000.0, peak)
        events.append(
            UnderperformanceEvent(
                start=series.timestamp_at(start).to_pydatetime(),
                end=series.timestamp_at(end).to_pydatetime(),
                alert_start=series.timestamp_at(run[0]).to_pydatetime(),
                alert_end=series.timestamp_at(run[1]).to_pydatetime(),
                peak_deficit_mwh=peak,
                lost_energy_mwh=lost,
                opportunity_cost=lost * energy_price,
                exceeding_steps=int(exceeding[run[0] : run[1] + 1].sum()),
            )
        )
    return events


def overperformance_flags(
    series: ResidualSeries, threshold: float, merge_gap_hours: float = 1.0
) -> List[DataQualityFlag]:
    rolling = series.grid_rolling
    with np.errstate(invalid="ignore"):
        surplus = np.isfinite(rolling) & (rolling >= threshold) & (rolling > 0)
    flags = []
    for start, end in _merge_runs(_runs(surplus), merge_gap_hours * STEPS_PER_HOUR):
        flags.append(
            DataQualityFlag(
                start=series.timestamp_at(start).to_pydatetime(),
                end=series.timestamp_at(end).to_pydatetime(),
                peak_surplus_mwh=float(np.nanmax(rolling[start : end + 1])),
            )
        )
    return flags


@dataclass(frozen=True)
class MonitorResult:
    series: ResidualSeries
    threshold: float
    report: EventReport


def monitor(
    track: PowerTrack,
    config: TurbineConfig,
    *,
    reference: Optional[PowerTrack] = None,
) -> MonitorResult:
    """Residuals, threshold and events for one monitored track.

    Without ``reference`` the threshold comes from all valid residuals of the
    monitored track itself. With it, the threshold is fixed by the reference
    period and the monitored data do not influence it.
    """
    series = rolling_energy_residual(track, config.horizon, config.min_coverage)
    if reference is None:
        history, source = series.valid_residuals, "history"
    else:
        ref_series = rolling_energy_residual(reference, config.horizon, config.min_coverage)
        history, source = ref_series.valid_residuals, "reference"
    threshold = derive_threshold(history, config.alert_quantile)
    events = detect_events(series, threshold, config.merge_gap_hours, config.energy_price)
    flags = overperformance_flags(series, threshold, config.merge_gap_hours)
    EVENTS_DETECTED.set(len(events))
    logger.info(
        "threshold %.3f MWh (%s, quantile %g, %g h): %d events, %d data-quality flags",
        threshold,
        source,
        config.alert_quantile,
        config.horizon,
        len(events),
        len(flags),
    )
    report = EventReport(
        threshold_mwh=threshold,
        alert_quantile=config.alert_quantile,
        horizon_hours=config.horizon,
        threshold_source=source,
        events=events,
        data_quality_flags=flags,
    )
    return MonitorResult(series=series, threshold=threshold, report=report)


def horizon_sensitivity(
    track: PowerTrack,
    config: TurbineConfig,
    horizons: Sequence[float] = (2.0, 24.0, 30.0),
    reference: Optional[PowerTrack] = None,
) -> pd.DataFrame:
    rows = []
    for horizon in horizons:
        cfg = config.model_copy(update={"horizon": float(horizon)})
        try:
            result = monitor(track, cfg, reference=reference)
        except InsufficientDataError as exc:
            logger.warning("horizon %g h skipped: %s", horizon, exc)
            rows.append(
                {"horizon_hours": float(horizon), "threshold_mwh": np.nan, "valid_windows": 0,
                 "exceeding_windows": 0, "events": 0}
            )
            continue
        residuals = result.series.valid_residuals
        rows.append(
            {
                "horizon_hours": float(horizon),
                "threshold_mwh": result.threshold,
                "valid_windows": int(len(residuals)),
                "exceeding_windows": int((residuals <= -result.threshold).sum()),
                "events": len(result.report.events),
            }
        )
    return pd.DataFrame(
        rows, columns=["horizon_hours", "threshold_mwh", "valid_windows", "exceeding_windows", "events"]
    )


def event_window_share(series: ResidualSeries, events: Sequence[UnderperformanceEvent]) -> float:
    frame = series.frame
    valid = frame["valid"].to_numpy()
    if not valid.any():
        return 0.0
    ts = frame["timestamp"]
    inside = np.zeros(len(frame), dtype=bool)
    for event in events:
        inside |= ((ts >= pd.Timestamp(event.alert_start)) & (ts <= pd.Timestamp(event.alert_end))).to_numpy()
    return float((inside & valid).sum() / valid.sum())


def write_residual_csv(series: ResidualSeries, path: Path) -> None:
    f = series.frame
    out = pd.DataFrame(
        {
            "timestamp": format_utc(f["timestamp"]),
            "power_kw": f["power"].to_numpy(),
            "expected_kw": f["expected"].to_numpy(),
            "rolling_residual_mwh": f["rolling_residual_mwh"].to_numpy(),
            "valid": f["valid"].astype(int).to_numpy(),
        }
    )
    out.to_csv(path, index=False, lineterminator="\n", na_rep="")


def write_metrics_csv(metrics: pd.DataFrame, path: Path) -> None:
    out = metrics.copy()
    out["timestamp"] = format_utc(out["timestamp"])
    out.to_csv(path, index=False, lineterminator="\n", na_rep="")


def write_events_json(report: EventReport, path: Path) -> None:
    payload = report.model_dump(mode="json")
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_events(path: Path) -> EventReport:
    path = Path(path)
    if not path.is_file():
        raise TurbineWatchError(f"{path}: events file not found")
    try:
        return EventReport.model_validate_json(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise TurbineWatchError(f"{path}: not a valid events report ({exc.__class__.__name__})")


def read_residual_csv(path: Path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    frame["timestamp"] = pd.to_datetime(frame["timestamp"], utc=True, format="ISO8601")
    frame["valid"] = frame["valid"].astype(bool)
    return frame


@dataclass(frozen=True)
class ResidualPoint:
    timestamp: datetime
    rolling_residual_mwh: Optional[float]
    coverage: float


@dataclass(frozen=True)
class MonitorSnapshot:
    points: Tuple[ResidualPoint, ...]

    @property
    def latest(self) -> Optional[ResidualPoint]:
        return self.points[-1] if self.points else None


class StreamingMonitor:
    """Incremental rolling residual for one ordered producer.

    Values match ``rolling_energy_residual`` on the same records bit for bit.
    Readers call ``snapshot()`` from any thread and see the last ``history``
    points.
    """

    def __init__(self, horizon: float, min_coverage: float = 0.9, history: int = 1008):
        self.steps = steps_for_hours(horizon)
        if self.steps < 1:
            raise ConfigError(f"horizon {horizon} h is shorter than one 10-minute step")
        self.needed = math.ceil(min_coverage * self.steps - 1e-9)
        self._lock = threading.Lock()
        self._sums: Deque[float] = deque([0.0], maxlen=self.steps + 1)
        self._counts: Deque[float] = deque([0.0], maxlen=self.steps + 1)
        self._last: Optional[pd.Timestamp] = None
        if history < 1:
            raise ConfigError(f"history must keep at least one point, got {history}")
        self.history = history
        self._points: Deque[ResidualPoint] = deque(maxlen=history)

    def _advance(self, residual_kwh: float, valid: bool) -> None:
        self._sums.append(self._sums[-1] + residual_kwh)
        self._counts.append(self._counts[-1] + (1.0 if valid else 0.0))

    def update(self, timestamp, power: float, expected: float, status_code: int = 0) -> ResidualPoint:
        ts = pd.Timestamp(timestamp)
        ts = ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")
        valid = status_code == 0 and math.isfinite(power) and math.isfinite(expected)
        residual = float(step_energy(power) - step_energy(expected)) if valid else 0.0
        with self._lock:
            if self._last is not None:
                gap = int((ts - self._last) // STEP)
                if gap < 1:
                    raise TurbineWatchError(f"out-of-order timestamp {ts.isoformat()}")
                for _ in range(gap - 1):
                    self._advance(0.0, False)
            self._advance(residual, valid)
            self._last = ts
            count = self._counts[-1] - self._counts[0]
            window = self._sums[-1] - self._sums[0]
            point = ResidualPoint(
                timestamp=ts.to_pydatetime(),
                rolling_residual_mwh=window / 1000.0 if count >= self.needed else None,
                coverage=count / self.steps,
            )
            self._points.append(point)
            return point

    def snapshot(self) -> MonitorSnapshot:
        with self._lock:
            return MonitorSnapshot(points=tuple(self._points))
