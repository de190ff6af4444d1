"""Synthetic 10-minute SCADA series with a known power relation.

Weather is drawn first, then the ground-truth power, then faults, noise,
logged outages and gross outliers, always in that order so a scenario and
its seed fix every value.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError
from scipy import signal, stats

from ..errors import ScenarioError
from ..models import FaultKind, Scenario
from ..telemetry import count_records
from ..utils.timegrid import STEP, STEPS_PER_DAY, STEPS_PER_HOUR, format_utc, on_grid
from .ingest import RECORD_COLUMNS


logger = logging.getLogger(__name__)

IDLE_PITCH_DEG = 12.0
FINE_PITCH_DEG = 1.0
FEATHER_PITCH_DEG = 90.0
PITCH_SLOPE_DEG_PER_MPS = 1.8
OUTAGE_STATUS = 1
TRUTH_COLUMNS = ["timestamp", "true_expected_kw", "injected_deficit_kwh"]


def ground_truth_power(speed: Union[float, np.ndarray], scenario: Scenario) -> Union[float, np.ndarray]:
    v = np.asarray(speed, dtype=float)
    if (v < 0).any():
        raise ScenarioError("wind speed must be non-negative")
    ci, vr, co = scenario.cut_in, scenario.rated_speed, scenario.cut_out
    ramp = scenario.rated_power * (v**3 - ci**3) / (vr**3 - ci**3)
    power = np.select(
        [v < ci, v < vr, v < co],
        [-scenario.consumption_kw, ramp, scenario.rated_power],
        default=0.0,
    )
    return float(power) if power.ndim == 0 else power


def direction_factor(direction: np.ndarray, scenario: Scenario) -> np.ndarray:
    factor = np.ones_like(direction, dtype=float)
    for sector in scenario.direction_derate:
        if sector.start_deg <= sector.end_deg:
            inside = (direction >= sector.start_deg) & (direction < sector.end_deg)
        else:
            inside = (direction >= sector.start_deg) | (direction < sector.end_deg)
        factor = np.where(inside, factor * (1.0 - sector.derate), factor)
    return factor


@dataclass
class TruthLog:
    frame: pd.DataFrame
    fault_deficits_kwh: List[float] = field(default_factory=list)
    gaps: List[Tuple[pd.Timestamp, pd.Timestamp]] = field(default_factory=list)
    outlier_timestamps: List[pd.Timestamp] = field(default_factory=list)
    outage_steps: int = 0

    @property
    def total_deficit_kwh(self) -> float:
        return float(self.frame["injected_deficit_kwh"].sum())

    def deficit_between(self, start, end) -> float:
        ts = self.frame["timestamp"]
        mask = (ts >= pd.Timestamp(start)) & (ts <= pd.Timestamp(end))
        return float(self.frame.loc[mask, "injected_deficit_kwh"].sum())


def _window_mask(timestamps: pd.DatetimeIndex, start, end) -> np.ndarray:
    return np.asarray((timestamps >= pd.Timestamp(start)) & (timestamps < pd.Timestamp(end)))


def _wind_speed(rng: np.random.Generator, n: int, scenario: Scenario) -> np.ndarray:
    w = scenario.weather
    phi = w.autocorrelation
    noise = rng.standard_normal(n)
    # stationary AR(1) with unit variance
    rest, _ = signal.lfilter([math.sqrt(1.0 - phi**2)], [1.0, -phi], noise[1:], zi=[phi * noise[0]])
    latent = np.concatenate([noise[:1], rest])
    u = np.clip(stats.norm.cdf(latent), 1e-12, 1.0 - 1e-12)
    return w.weibull_scale * (-np.log1p(-u)) ** (1.0 / w.weibull_shape)


def _wind_direction(rng: np.random.Generator, n: int, scenario: Scenario) -> np.ndarray:
    w = scenario.weather
    steps = rng.standard_normal(n) * w.dir_drift_deg
    deviation = signal.lfilter([1.0], [1.0, -(1.0 - w.dir_reversion)], steps)
    return np.mod(w.prevailing_dir + deviation, 360.0)


def _air_temperature(rng: np.random.Generator, ts: pd.DatetimeIndex, scenario: Scenario) -> np.ndarray:
    w = scenario.weather
    day = np.asarray(ts.dayofyear - 1 + ts.hour / 24.0 + ts.minute / 1440.0, dtype=float)
    hour = np.asarray(ts.hour + ts.minute / 60.0, dtype=float)
    seasonal = -w.temp_seasonal_amplitude * np.cos(2.0 * np.pi * (day - 15.0) / 365.25)
    daily = -w.temp_daily_amplitude * np.cos(2.0 * np.pi * (hour - 3.0) / 24.0)
    return w.temp_mean + seasonal + daily + rng.normal(0.0, w.temp_noise, len(ts))


def _pitch(speed: np.ndarray, scenario: Scenario) -> np.ndarray:
    above = FINE_PITCH_DEG + PITCH_SLOPE_DEG_PER_MPS * (speed - scenario.rated_speed)
    return np.select(
        [speed < scenario.cut_in, speed < scenario.rated_speed, speed < scenario.cut_out],
        [IDLE_PITCH_DEG, FINE_PITCH_DEG, above],
        default=FEATHER_PITCH_DEG,
    )


def generate(scenario: Scenario) -> Tuple[pd.DataFrame, TruthLog]:
    start = pd.Timestamp(scenario.start)
    if not on_grid(pd.Series([start]))[0]:
        raise ScenarioError(f"scenario start {start.isoformat()} is not on the 10-minute grid")
    n = int(round(scenario.days * STEPS_PER_DAY))
    if n < 1:
        raise ScenarioError("scenario is shorter than one 10-minute step")
    ts = pd.date_range(start, periods=n, freq=STEP)
    rng = np.random.default_rng(scenario.seed)

    speed = _wind_speed(rng, n, scenario)
    for window in scenario.steady_wind:
        speed = np.where(_window_mask(ts, window.start, window.end), window.speed, speed)
    direction = _wind_direction(rng, n, scenario)
    temperature = _air_temperature(rng, ts, scenario)

    truth = ground_truth_power(speed, scenario) * direction_factor(direction, scenario)
    truth = np.where(truth > 0, truth, -scenario.consumption_kw * (speed < scenario.cut_in))
    power = truth.copy()
    pitch = _pitch(speed, scenario)
    hydraulic = np.full(n, scenario.hydraulic_nominal)
    measured_speed = speed.copy()
    keep = np.ones(n, dtype=bool)
    truth_log = TruthLog(frame=pd.DataFrame())

    for fault in scenario.faults:
        window = _window_mask(ts, fault.start, fault.end)
        deficit = 0.0
        if fault.derate > 0:
            before = power.copy()
            power = np.where(window & (power > 0), power * (1.0 - fault.derate), power)
            deficit = float(((before - power) / STEPS_PER_HOUR).sum())
        if fault.kind is FaultKind.PITCH_MISALIGNMENT:
            pitch = np.where(window, pitch + fault.magnitude, pitch)
        elif fault.kind is FaultKind.HYDRAULIC_DROP:
            hydraulic = np.where(window, hydraulic - fault.magnitude, hydraulic)
        elif fault.kind is FaultKind.ANEMOMETER_BIAS:
            measured_speed = np.where(window, np.maximum(measured_speed + fault.magnitude, 0.0), measured_speed)
        elif fault.kind is FaultKind.DATA_GAP:
            keep &= ~window
            truth_log.gaps.append((pd.Timestamp(fault.start), pd.Timestamp(fault.end)))
        truth_log.fault_deficits_kwh.append(deficit)
    deficit_kwh = (truth - power) / STEPS_PER_HOUR

    power = power + rng.normal(0.0, scenario.noise_std, n)
    pitch = pitch + rng.normal(0.0, scenario.pitch_noise, n)
    hydraulic = hydraulic + rng.normal(0.0, scenario.hydraulic_noise, n)

    status = np.zeros(n, dtype=np.int64)
    n_outages = int(rng.poisson(scenario.outage_rate_per_day * scenario.days))
    for first in np.sort(rng.integers(0, n, size=n_outages)):
        span = slice(int(first), int(first) + scenario.outage_steps)
        status[span] = OUTAGE_STATUS
        power[span] = -scenario.consumption_kw + rng.normal(0.0, 2.0, len(status[span]))
    truth_log.outage_steps = int((status != 0).sum())

    n_outliers = int(round(scenario.outlier_fraction * n))
    if n_outliers:
        eligible = np.flatnonzero((status == 0) & (deficit_kwh == 0) & keep)
        picks = np.sort(rng.choice(eligible, size=min(n_outliers, len(eligible)), replace=False))
        signs = rng.choice([-1.0, 1.0], size=len(picks))
        power[picks] += signs * scenario.outlier_sigma * scenario.noise_std
        truth_log.outlier_timestamps = list(ts[picks])

    power = np.clip(power, -scenario.rated_power, 1.1 * scenario.rated_power)

    truth_log.frame = pd.DataFrame(
        {"timestamp": ts, "true_expected_kw": truth, "injected_deficit_kwh": deficit_kwh}
    )
    records = pd.DataFrame(
        {
            "timestamp": ts,
            "wind_speed": measured_speed,
            "wind_dir": direction,
            "air_temp": temperature,
            "power": power,
            "pitch_angle": pitch,
            "hydraulic_pressure": hydraulic,
            "status_code": status,
        }
    )[RECORD_COLUMNS]
    records = records[keep].reset_index(drop=True)
    count_records("simulate", "generated", len(records))
    logger.info(
        "simulated %d records over %g days: %d faults (%.1f MWh injected), %d outage steps, %d outliers",
        len(records),
        scenario.days,
        len(scenario.faults),
        truth_log.total_deficit_kwh / 1000.0,
        truth_log.outage_steps,
        len(truth_log.outlier_timestamps),
    )
    return records, truth_log


def write_truth_csv(truth: TruthLog, path: Path) -> None:
    out = truth.frame.copy()
    out["timestamp"] = format_utc(out["timestamp"])
    out[TRUTH_COLUMNS].to_csv(path, index=False, lineterminator="\n")


def truth_path_for(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".truth.csv")


def load_scenario(path: Path) -> Scenario:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except FileNotFoundError:
        raise ScenarioError(f"{path}: scenario file not found")
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: invalid YAML ({exc.__class__.__name__})")
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "scenario"
        raise ScenarioError(f"{path}: invalid scenario at {where}: {first['msg']}")


def dump_scenario(scenario: Scenario, path: Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(scenario.model_dump(mode="json"), sort_keys=False), encoding="utf-8"
    )
