from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from ..config import TurbineConfig
from ..errors import InsufficientDataError, SchemaError
from ..models import ChannelAnomaly, DiagnosisReport, PitchBinComparison, UnderperformanceEvent


logger = logging.getLogger(__name__)

DEFAULT_CHANNELS = ("hydraulic_pressure", "pitch_angle")
BAND_LEVELS = (0.05, 0.5, 0.95)


def _require_channel(records: pd.DataFrame, channel: str, label: str) -> np.ndarray:
    if channel not in records.columns or records[channel].isna().all():
        raise SchemaError(f"{label} records have no {channel} channel")
    return records[channel].to_numpy(dtype=float)


def reference_window(
    records: pd.DataFrame, event: UnderperformanceEvent
) -> Tuple[pd.Timestamp, pd.Timestamp, pd.DataFrame, pd.DataFrame]:
    """Split records into the event span and the rest of its calendar month.

    Returns (month start, month end, event records, reference records).
    """
    start = pd.Timestamp(event.start)
    end = pd.Timestamp(event.end)
    month_start = start.normalize().replace(day=1)
    month_end = month_start + pd.offsets.MonthBegin(1)
    ts = records["timestamp"]
    in_event = (ts >= start) & (ts <= end)
    in_month = (ts >= month_start) & (ts < month_end)
    return month_start, month_end, records[in_event], records[in_month & ~in_event]


def pitch_vs_speed_comparison(
    event_records: pd.DataFrame, reference_records: pd.DataFrame, config: TurbineConfig
) -> List[PitchBinComparison]:
    if event_records.empty or reference_records.empty:
        raise InsufficientDataError("pitch comparison needs event and reference records")
    ev_pitch = _require_channel(event_records, "pitch_angle", "event")
    ref_pitch = _require_channel(reference_records, "pitch_angle", "reference")
    width = config.bin_width
    ev_bin = np.floor(event_records["wind_speed"].to_numpy(dtype=float) / width).astype(np.int64)
    ref_bin = np.floor(reference_records["wind_speed"].to_numpy(dtype=float) / width).astype(np.int64)

    rows = []
    for b in np.unique(ev_bin):
        event_vals = ev_pitch[(ev_bin == b) & np.isfinite(ev_pitch)]
        if event_vals.size == 0:
            continue
        ref_vals = ref_pitch[(ref_bin == b) & np.isfinite(ref_pitch)]
        event_median = float(np.median(event_vals))
        row = PitchBinComparison(
            bin_lo=float(b * width),
            bin_hi=float((b + 1) * width),
            event_median=event_median,
            event_count=int(event_vals.size),
            reference_count=int(ref_vals.size),
        )
        if ref_vals.size:
            q05, median, q95 = (float(q) for q in np.quantile(ref_vals, BAND_LEVELS))
            row.reference_q05, row.reference_median, row.reference_q95 = q05, median, q95
            row.exceeds = event_median < q05 or event_median > q95
        rows.append(row)
    return rows


def channel_summary(
    event_records: pd.DataFrame,
    reference_records: pd.DataFrame,
    channels: Sequence[str] = DEFAULT_CHANNELS,
) -> List[ChannelAnomaly]:
    """Channels ranked by |z| of the event mean against the reference period.

    Channels with a constant reference get no z-score and rank last.
    """
    out = []
    for channel in channels:
        ev = _require_channel(event_records, channel, "event")
        ref = _require_channel(reference_records, channel, "reference")
        ev, ref = ev[np.isfinite(ev)], ref[np.isfinite(ref)]
        ref_mean = float(ref.mean())
        ref_std = float(ref.std(ddof=1)) if ref.size > 1 else 0.0
        ev_mean = float(ev.mean()) if ev.size else float("nan")
        z = (ev_mean - ref_mean) / ref_std if ref_std > 0 and ev.size else None
        out.append(
            ChannelAnomaly(
                channel=channel,
                reference_mean=ref_mean,
                reference_std=ref_std,
                event_mean=ev_mean,
                z=z,
            )
        )
    return sorted(out, key=lambda a: a.rank_key)


def diagnose_event(
    records: pd.DataFrame,
    event: UnderperformanceEvent,
    config: TurbineConfig,
    channels: Sequence[str] = DEFAULT_CHANNELS,
) -> DiagnosisReport:
    month_start, month_end, event_records, reference_records = reference_window(records, event)
    pitch = pitch_vs_speed_comparison(event_records, reference_records, config)
    ranked = channel_summary(event_records, reference_records, channels)
    flagged = sum(r.exceeds for r in pitch)
    logger.info(
        "event %s: %d of %d wind-speed bins outside the reference pitch band, top channel %s",
        pd.Timestamp(event.start).isoformat(),
        flagged,
        len(pitch),
        ranked[0].channel if ranked else "-",
    )
    return DiagnosisReport(
        event_start=event.start,
        event_end=event.end,
        reference_start=month_start.to_pydatetime(),
        reference_end=(month_end - pd.Timedelta(minutes=10)).to_pydatetime(),
        pitch_bins=pitch,
        channels=ranked,
    )


def write_diagnosis_json(reports: Sequence[DiagnosisReport], path: Path) -> None:
    payload = [r.model_dump(mode="json") for r in reports]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
