from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from .errors import ConfigError

load_dotenv()

LOG_LEVEL = os.getenv("TW_LOG_LEVEL", "INFO")
DEFAULT_CONFIG_PATH = os.getenv("TW_CONFIG") or None
N_JOBS = int(os.getenv("TW_N_JOBS", "1"))
METRICS_FILE = os.getenv("TW_METRICS_FILE") or None


class TurbineConfig(BaseModel):
    rated_power: float = Field(default=3300.0, gt=0)
    rated_speed: float = Field(default=12.0, gt=0)
    cut_in: float = Field(default=3.0, ge=0)
    cut_out: float = Field(default=25.0, gt=0)
    bin_width: float = Field(default=1.0, gt=0)
    quantile_lo: float = 0.05
    quantile_hi: float = 0.95
    outlier_margin: float = Field(default=0.5, ge=0)
    min_bin_count: int = Field(default=10, ge=1)
    exclusion_radius: int = Field(default=1, ge=0)
    train_ratio: float = Field(default=0.7, gt=0, lt=1)
    horizon: float = Field(default=24.0, gt=0)
    min_coverage: float = Field(default=0.9, gt=0, le=1)
    alert_quantile: float = Field(default=0.001, gt=0, lt=0.5)
    merge_gap_hours: float = Field(default=1.0, ge=0)
    ratio_cutoff: float = Field(default=1.0, ge=0)
    energy_price: float = Field(default=50.0, ge=0)

    @model_validator(mode="after")
    def check_ranges(self) -> "TurbineConfig":
        if not 0 < self.quantile_lo < self.quantile_hi < 1:
            raise ValueError("quantiles must satisfy 0 < quantile_lo < quantile_hi < 1")
        if not self.cut_in < self.cut_out:
            raise ValueError("cut_in must be below cut_out")
        return self


class GBMParams(BaseModel):
    n_estimators: int = Field(default=500, ge=1)
    max_depth: int = Field(default=4, ge=1)
    learning_rate: float = Field(default=0.05, gt=0, le=1)
    subsample: float = Field(default=0.8, gt=0, le=1)
    min_samples_leaf: int = Field(default=5, ge=1)


class ForestParams(BaseModel):
    n_estimators: int = Field(default=300, ge=1)
    min_samples_leaf: int = Field(default=5, ge=1)
    max_depth: Optional[int] = Field(default=None, ge=1)
    # "sqrt" is ceil(sqrt(d)) per split, "all" disables feature subsampling
    max_features: Union[Literal["sqrt", "all"], int] = "sqrt"
    bootstrap: bool = True


class KNNParams(BaseModel):
    k: int = Field(default=10, ge=1)


class ModelSettings(BaseModel):
    gbm: GBMParams = Field(default_factory=GBMParams)
    random_forest: ForestParams = Field(default_factory=ForestParams)
    knn: KNNParams = Field(default_factory=KNNParams)


class Settings(BaseModel):
    turbine: TurbineConfig = Field(default_factory=TurbineConfig)
    models: ModelSettings = Field(default_factory=ModelSettings)
    seed: int = Field(default=42, ge=0, lt=2**64)
    n_jobs: int = N_JOBS


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _env_layer() -> Dict[str, Any]:
    layer: Dict[str, Any] = {}
    if os.getenv("TW_SEED"):
        layer["seed"] = int(os.environ["TW_SEED"])
    return layer


def load_settings(
    path: Optional[Path] = None,
    *,
    seed: Optional[int] = None,
    turbine_overrides: Optional[Dict[str, Any]] = None,
) -> Settings:
    """Resolve flags > config file > TW_* environment > built-in defaults."""
    data: Dict[str, Any] = _env_layer()
    path = path or (Path(DEFAULT_CONFIG_PATH) if DEFAULT_CONFIG_PATH else None)
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise ConfigError(f"{path}: config file not found")
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc.__class__.__name__})")
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        data = _merge(data, loaded)
    flags: Dict[str, Any] = {}
    if seed is not None:
        flags["seed"] = seed
    overrides = {k: v for k, v in (turbine_overrides or {}).items() if v is not None}
    if overrides:
        flags["turbine"] = overrides
    data = _merge(data, flags)
    try:
        return Settings.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "settings"
        raise ConfigError(f"invalid configuration at {where}: {first['msg']}")
