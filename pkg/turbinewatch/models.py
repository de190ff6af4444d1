from __future__ import annotations

import math
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


class FeatureSet(str, Enum):
    V = "V"
    VD = "VD"
    VDT = "VDT"

    @property
    def size(self) -> int:
        return {"V": 1, "VD": 3, "VDT": 4}[self.value]


class Algorithm(str, Enum):
    GBM = "gbm"
    RANDOM_FOREST = "random_forest"
    KNN = "knn"
    BIN_CURVE = "bin_curve"


def as_utc(value: datetime) -> datetime:
    if value.tzinfo is None:
        return value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc)


# tie-break order for model selection
ALGORITHM_ORDER: Tuple[str, ...] = ("gbm", "random_forest", "knn", "bin_curve")


class ScadaRecord(BaseModel):
    timestamp: datetime
    wind_speed: float = Field(ge=0)
    wind_dir: float = Field(ge=0, lt=360)
    air_temp: float
    power: float
    pitch_angle: float
    hydraulic_pressure: Optional[float] = None
    status_code: int = 0

    @field_validator("timestamp")
    @classmethod
    def check_grid(cls, value: datetime) -> datetime:
        value = as_utc(value)
        if value.minute % 10 or value.second or value.microsecond:
            raise ValueError("timestamp is not on the 10-minute grid")
        return value


class QuantileBin(BaseModel):
    lower: float
    upper: float
    q_lo: Optional[float] = None
    q_hi: Optional[float] = None
    median: Optional[float] = None
    count: int = 0


class BinQuantiles(BaseModel):
    bin_width: float
    bins: List[QuantileBin]
    filtered_bins: List[int] = Field(default_factory=list)

    def index_for(self, speeds) -> np.ndarray:
        idx = np.floor(np.asarray(speeds, dtype=float) / self.bin_width).astype(np.int64)
        return np.clip(idx, 0, len(self.bins) - 1)

    @property
    def occupied(self) -> List[QuantileBin]:
        return [b for b in self.bins if b.count > 0]


class ModelRow(BaseModel):
    algorithm: str
    feature_set: FeatureSet
    rmse_kw: float
    r2: Optional[float] = None


class ModelReport(BaseModel):
    rows: List[ModelRow]
    selected: int = 0

    @property
    def best(self) -> ModelRow:
        return self.rows[self.selected]


class MetricVector(BaseModel):
    m1: float
    m2: float
    m3: Optional[float] = None
    m4: Optional[float] = None
    m5: Optional[float] = None
    m6: Optional[float] = None
    power_ratio_valid: bool = True
    energy_ratio_valid: bool = True


class UnderperformanceEvent(BaseModel):
    start: datetime
    end: datetime
    alert_start: datetime
    alert_end: datetime
    peak_deficit_mwh: float = Field(ge=0)
    lost_energy_mwh: float = Field(ge=0)
    opportunity_cost: float = Field(ge=0)
    exceeding_steps: int = Field(ge=1)

    @model_validator(mode="after")
    def check_order(self) -> "UnderperformanceEvent":
        if self.start > self.end or self.alert_start > self.alert_end:
            raise ValueError("event start must not be after its end")
        return self

    @property
    def duration_hours(self) -> float:
        return (self.end - self.start).total_seconds() / 3600.0 + 1.0 / 6.0


class DataQualityFlag(BaseModel):
    start: datetime
    end: datetime
    peak_surplus_mwh: float


class EventReport(BaseModel):
    threshold_mwh: float
    alert_quantile: float
    horizon_hours: float
    threshold_source: str
    events: List[UnderperformanceEvent] = Field(default_factory=list)
    data_quality_flags: List[DataQualityFlag] = Field(default_factory=list)


class PitchBinComparison(BaseModel):
    bin_lo: float
    bin_hi: float
    reference_q05: Optional[float] = None
    reference_median: Optional[float] = None
    reference_q95: Optional[float] = None
    reference_count: int = 0
    event_median: float
    event_count: int
    exceeds: bool = False


class ChannelAnomaly(BaseModel):
    channel: str
    reference_mean: float
    reference_std: float
    event_mean: float
    z: Optional[float] = None

    @property
    def rank_key(self) -> Tuple[int, float, str]:
        if self.z is None or not math.isfinite(self.z):
            return (1, 0.0, self.channel)
        return (0, -abs(self.z), self.channel)


class DiagnosisReport(BaseModel):
    event_start: datetime
    event_end: datetime
    reference_start: datetime
    reference_end: datetime
    pitch_bins: List[PitchBinComparison]
    channels: List[ChannelAnomaly]


class FaultKind(str, Enum):
    PITCH_MISALIGNMENT = "pitch_misalignment"
    HYDRAULIC_DROP = "hydraulic_drop"
    ANEMOMETER_BIAS = "anemometer_bias"
    DATA_GAP = "data_gap"


class FaultSpec(BaseModel):
    kind: FaultKind
    start: datetime
    end: datetime
    # pitch offset (deg), pressure drop (bar) or speed bias (m/s) by kind
    magnitude: float = 0.0
    derate: float = Field(default=0.0, ge=0, le=1)

    @field_validator("start", "end")
    @classmethod
    def normalize_utc(cls, value: datetime) -> datetime:
        return as_utc(value)

    @model_validator(mode="after")
    def check_window(self) -> "FaultSpec":
        if self.end <= self.start:
            raise ValueError("fault window must end after it starts")
        return self


class SteadyWind(BaseModel):
    start: datetime
    end: datetime
    speed: float = Field(ge=0)

    @field_validator("start", "end")
    @classmethod
    def normalize_utc(cls, value: datetime) -> datetime:
        return as_utc(value)


class DirectionSector(BaseModel):
    start_deg: float = Field(ge=0, lt=360)
    end_deg: float = Field(ge=0, le=360)
    derate: float = Field(ge=0, le=1)


class WeatherParams(BaseModel):
    weibull_scale: float = Field(default=8.0, gt=0)
    weibull_shape: float = Field(default=2.0, gt=0)
    autocorrelation: float = Field(default=0.98, ge=0, lt=1)
    prevailing_dir: float = Field(default=240.0, ge=0, lt=360)
    dir_drift_deg: float = Field(default=6.0, ge=0)
    dir_reversion: float = Field(default=0.01, ge=0, le=1)
    temp_mean: float = 8.0
    temp_seasonal_amplitude: float = 8.0
    temp_daily_amplitude: float = 3.0
    temp_noise: float = Field(default=0.5, ge=0)


class Scenario(BaseModel):
    start: datetime = datetime(2021, 1, 1, tzinfo=timezone.utc)
    days: float = Field(default=365.0, gt=0)
    seed: int = Field(default=7, ge=0, lt=2**64)
    weather: WeatherParams = Field(default_factory=WeatherParams)
    rated_power: float = Field(default=3300.0, gt=0)
    cut_in: float = Field(default=3.0, ge=0)
    rated_speed: float = Field(default=12.0, gt=0)
    cut_out: float = Field(default=25.0, gt=0)
    consumption_kw: float = Field(default=15.0, ge=0)
    noise_std: float = Field(default=50.0, ge=0)
    pitch_noise: float = Field(default=0.3, ge=0)
    hydraulic_nominal: float = Field(default=180.0, gt=0)
    hydraulic_noise: float = Field(default=1.5, ge=0)
    direction_derate: List[DirectionSector] = Field(default_factory=list)
    steady_wind: List[SteadyWind] = Field(default_factory=list)
    outage_rate_per_day: float = Field(default=0.0, ge=0)
    outage_steps: int = Field(default=6, ge=1)
    outlier_fraction: float = Field(default=0.0, ge=0, lt=1)
    outlier_sigma: float = Field(default=10.0, ge=0)
    faults: List[FaultSpec] = Field(default_factory=list)

    @field_validator("start")
    @classmethod
    def normalize_utc(cls, value: datetime) -> datetime:
        return as_utc(value)

    @model_validator(mode="after")
    def check_curve_and_windows(self) -> "Scenario":
        if not self.cut_in < self.rated_speed < self.cut_out:
            raise ValueError("scenario needs cut_in < rated_speed < cut_out")
        horizon_end = self.start.timestamp() + self.days * 86400.0
        for fault in self.faults:
            if fault.start.timestamp() < self.start.timestamp() or fault.end.timestamp() > horizon_end:
                raise ValueError(f"{fault.kind.value} window lies outside the scenario duration")
        return self


class ManifestFile(BaseModel):
    name: str
    sha256: str


class RunManifest(BaseModel):
    command: str
    toolkit_version: str
    seed: int
    config: Dict[str, Any]
    inputs: List[ManifestFile] = Field(default_factory=list)
    outputs: List[ManifestFile] = Field(default_factory=list)
    summary: Dict[str, Any] = Field(default_factory=dict)
