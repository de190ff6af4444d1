from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd

from ..config import TurbineConfig
from ..errors import IngestError, SchemaError
from ..telemetry import count_records
from ..utils.timegrid import STEP, format_utc, grid_positions, on_grid


logger = logging.getLogger(__name__)

# CSV header -> frame column
CSV_COLUMNS = {
    "timestamp": "timestamp",
    "wind_speed_mps": "wind_speed",
    "wind_dir_deg": "wind_dir",
    "air_temp_c": "air_temp",
    "power_kw": "power",
    "pitch_angle_deg": "pitch_angle",
    "hydraulic_pressure_bar": "hydraulic_pressure",
    "status_code": "status_code",
}
RECORD_COLUMNS = list(CSV_COLUMNS.values())
MAX_REJECT_FRACTION = 0.5


@dataclass(frozen=True)
class ParseResult:
    records: pd.DataFrame
    rejects: pd.DataFrame


def empty_records() -> pd.DataFrame:
    frame = pd.DataFrame({col: pd.Series(dtype=float) for col in RECORD_COLUMNS})
    frame["timestamp"] = pd.Series(dtype="datetime64[ns, UTC]")
    frame["status_code"] = pd.Series(dtype=np.int64)
    return frame


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def _row_reasons(raw: pd.DataFrame, config: TurbineConfig) -> Tuple[pd.DataFrame, pd.Series]:
    reasons = pd.Series("", index=raw.index, dtype=object)

    def mark(mask: pd.Series, reason: str) -> None:
        fresh = mask & (reasons == "")
        reasons[fresh] = reason

    ts = pd.to_datetime(raw["timestamp"], utc=True, errors="coerce", format="ISO8601")
    mark(ts.isna(), "unparseable timestamp")
    grid_ok = pd.Series(False, index=raw.index)
    valid_ts = ts.notna()
    grid_ok[valid_ts] = on_grid(ts[valid_ts])
    mark(valid_ts & ~grid_ok, "timestamp not on 10-minute grid")

    parsed = pd.DataFrame({"timestamp": ts})
    for csv_col, col in CSV_COLUMNS.items():
        if col == "timestamp":
            continue
        text = raw[csv_col].str.strip()
        # float() keeps the shortest-repr round trip exact
        values = text.map(_parse_float).astype(float)
        if col == "hydraulic_pressure":
            mark((text != "") & values.isna(), f"non-numeric {csv_col}")
        else:
            mark(values.isna(), f"missing or non-numeric {csv_col}")
        parsed[col] = values.astype(float)

    speed, direction, power = parsed["wind_speed"], parsed["wind_dir"], parsed["power"]
    mark(speed < 0, "wind_speed_mps below 0")
    mark((direction < 0) | (direction >= 360), "wind_dir_deg outside [0, 360)")
    mark(~np.isfinite(parsed[["wind_speed", "wind_dir", "air_temp", "power", "pitch_angle"]]).all(axis=1), "non-finite value")
    rated = config.rated_power
    mark((power < -rated) | (power > 1.1 * rated), "power_kw outside sanity bound")
    status = parsed["status_code"]
    mark(status.notna() & (status != np.round(status)), "status_code not an integer")
    return parsed, reasons


def parse_scada_csv(path: Path, config: TurbineConfig) -> ParseResult:
    """Read one turbine's 10-minute SCADA export into a sorted record frame.

    Malformed rows are returned as rejects with a reason instead of being
    dropped. Duplicate timestamps and files where more than half the rows
    are rejected abort the parse.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"{path}: file not found")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise IngestError(f"{path}: file is empty")
    missing = [c for c in CSV_COLUMNS if c not in raw.columns]
    if missing:
        raise SchemaError(f"{path}: missing required column {missing[0]!r}")
    extra = [c for c in raw.columns if c not in CSV_COLUMNS]
    if extra:
        logger.warning("%s: ignoring unexpected columns %s", path.name, extra)
    raw = raw[list(CSV_COLUMNS)].fillna("")

    parsed, reasons = _row_reasons(raw, config)
    bad = reasons != ""
    rejects = raw[bad].copy()
    rejects.insert(0, "line", rejects.index + 2)
    rejects["reason"] = reasons[bad]
    rejects = rejects.reset_index(drop=True)

    n_rows = len(raw)
    if n_rows and len(rejects) > MAX_REJECT_FRACTION * n_rows:
        raise IngestError(
            f"{path}: {len(rejects)} of {n_rows} rows rejected "
            f"(first: line {rejects['line'].iloc[0]}, {rejects['reason'].iloc[0]})"
        )

    records = parsed[~bad].copy()
    records["status_code"] = records["status_code"].astype(np.int64)
    records = records[RECORD_COLUMNS].sort_values("timestamp", kind="stable").reset_index(drop=True)
    dup = records["timestamp"].duplicated()
    if dup.any():
        first = records.loc[dup.idxmax(), "timestamp"]
        raise IngestError(f"{path}: duplicate timestamp {first.isoformat()}")

    count_records("ingest", "accepted", len(records))
    count_records("ingest", "rejected", len(rejects))
    logger.info("%s: %d records accepted, %d rejected", path.name, len(records), len(rejects))
    return ParseResult(records=records, rejects=rejects)


def write_scada_csv(records: pd.DataFrame, path: Path) -> None:
    out = pd.DataFrame(
        {
            "timestamp": format_utc(records["timestamp"]),
            "wind_speed_mps": records["wind_speed"].to_numpy(),
            "wind_dir_deg": records["wind_dir"].to_numpy(),
            "air_temp_c": records["air_temp"].to_numpy(),
            "power_kw": records["power"].to_numpy(),
            "pitch_angle_deg": records["pitch_angle"].to_numpy(),
            "hydraulic_pressure_bar": records["hydraulic_pressure"].to_numpy(),
            "status_code": records["status_code"].astype(np.int64).to_numpy(),
        }
    )
    out.to_csv(path, index=False, lineterminator="\n", na_rep="")


def write_rejects(rejects: pd.DataFrame, path: Path) -> None:
    rejects.to_csv(path, index=False, lineterminator="\n")


def rejects_path_for(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".rejects.csv")


def find_gaps(records: pd.DataFrame) -> List[Tuple[pd.Timestamp, int]]:
    """Missing 10-minute grid points between the first and last record."""
    if len(records) < 2:
        return []
    ts = records["timestamp"]
    origin = ts.iloc[0]
    pos = grid_positions(ts, origin)
    jumps = np.diff(pos)
    gaps: List[Tuple[pd.Timestamp, int]] = []
    for i in np.flatnonzero(jumps > 1):
        gaps.append((origin + STEP * int(pos[i] + 1), int(jumps[i] - 1)))
    return gaps
