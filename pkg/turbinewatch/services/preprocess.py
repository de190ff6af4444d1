from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import ndimage

from ..config import TurbineConfig
from ..errors import InsufficientDataError
from ..models import BinQuantiles, QuantileBin
from ..telemetry import count_records


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CleanSummary:
    input_records: int
    status_removed: int
    outliers_removed: int
    beyond_last_bin: int

    @property
    def removed_fraction(self) -> float:
        base = self.input_records - self.status_removed
        return self.outliers_removed / base if base else 0.0

    def as_dict(self) -> dict:
        return {
            "input_records": self.input_records,
            "status_removed": self.status_removed,
            "outliers_removed": self.outliers_removed,
            "beyond_last_bin": self.beyond_last_bin,
        }


@dataclass(frozen=True)
class CleanResult:
    clean: pd.DataFrame
    removed: pd.DataFrame
    bands: BinQuantiles
    status_removed: pd.DataFrame
    summary: CleanSummary


def filter_status(records: pd.DataFrame, exclusion_radius: int) -> pd.DataFrame:
    """Drop fault-logged records and ``exclusion_radius`` neighbours on each side."""
    faulty = records["status_code"].to_numpy() != 0
    if not faulty.any():
        return records
    width = 2 * exclusion_radius + 1
    drop = ndimage.binary_dilation(faulty, structure=np.ones(width, dtype=bool))
    return records[~drop]


def compute_bin_quantiles(records: pd.DataFrame, config: TurbineConfig) -> BinQuantiles:
    """Per wind-speed bin q_lo / median / q_hi of power.

    Quantiles use linear interpolation between order statistics, which is
    pandas' and numpy's default estimator.
    """
    if records.empty:
        raise InsufficientDataError("no records left to estimate power bands from")
    speeds = records["wind_speed"].to_numpy(dtype=float)
    width = config.bin_width
    n_bins = int(np.floor(speeds.max() / width)) + 1
    idx = np.floor(speeds / width).astype(np.int64)

    grouped = records["power"].groupby(idx)
    levels = [config.quantile_lo, 0.5, config.quantile_hi]
    table = grouped.quantile(levels).unstack()
    counts = grouped.size()

    bins = []
    for i in range(n_bins):
        lower, upper = i * width, (i + 1) * width
        if i in counts.index:
            row = table.loc[i]
            bins.append(
                QuantileBin(
                    lower=lower,
                    upper=upper,
                    q_lo=float(row[config.quantile_lo]),
                    median=float(row[0.5]),
                    q_hi=float(row[config.quantile_hi]),
                    count=int(counts.loc[i]),
                )
            )
        else:
            bins.append(QuantileBin(lower=lower, upper=upper))
    sparse = [i for i, b in enumerate(bins) if b.count < config.min_bin_count]
    return BinQuantiles(bin_width=width, bins=bins, filtered_bins=sparse)


def flag_outliers(records: pd.DataFrame, bands: BinQuantiles, margin: float) -> np.ndarray:
    speeds = records["wind_speed"].to_numpy(dtype=float)
    power = records["power"].to_numpy(dtype=float)
    idx = bands.index_for(speeds)
    beyond = int((speeds >= bands.bins[-1].upper).sum())
    if beyond:
        logger.warning("%d records above the last bin edge were placed in the last bin", beyond)

    q_lo = np.array([np.nan if b.q_lo is None else b.q_lo for b in bands.bins])[idx]
    q_hi = np.array([np.nan if b.q_hi is None else b.q_hi for b in bands.bins])[idx]
    enabled = np.ones(len(bands.bins), dtype=bool)
    enabled[bands.filtered_bins] = False
    enabled = enabled[idx] & np.isfinite(q_lo) & np.isfinite(q_hi)

    spread = margin * (q_hi - q_lo)
    with np.errstate(invalid="ignore"):
        outside = (power > q_hi + spread) | (power < q_lo - spread)
    return outside & enabled


def clean(records: pd.DataFrame, config: TurbineConfig) -> CleanResult:
    """filter_status -> compute_bin_quantiles -> flag_outliers -> drop flagged."""
    if records.empty:
        raise InsufficientDataError("cannot clean an empty record series")
    kept = filter_status(records, config.exclusion_radius)
    status_removed = records.loc[records.index.difference(kept.index)]
    bands = compute_bin_quantiles(kept, config)
    flagged = flag_outliers(kept, bands, config.outlier_margin)
    speeds = kept["wind_speed"].to_numpy(dtype=float)
    summary = CleanSummary(
        input_records=len(records),
        status_removed=len(status_removed),
        outliers_removed=int(flagged.sum()),
        beyond_last_bin=int((speeds >= bands.bins[-1].upper).sum()),
    )
    count_records("clean", "status_removed", summary.status_removed)
    count_records("clean", "outlier", summary.outliers_removed)
    count_records("clean", "kept", len(kept) - summary.outliers_removed)
    logger.info(
        "cleaning removed %d fault-logged and %d outlier records of %d (%.2f%% outliers)",
        summary.status_removed,
        summary.outliers_removed,
        summary.input_records,
        100.0 * summary.removed_fraction,
    )
    return CleanResult(
        clean=kept[~flagged],
        removed=kept[flagged],
        bands=bands,
        status_removed=status_removed,
        summary=summary,
    )


def bands_frame(bands: BinQuantiles) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "bin_lo": b.lower,
                "bin_hi": b.upper,
                "q_lo_kw": b.q_lo,
                "q_hi_kw": b.q_hi,
                "median_kw": b.median,
                "count": b.count,
            }
            for b in bands.occupied
        ],
        columns=["bin_lo", "bin_hi", "q_lo_kw", "q_hi_kw", "median_kw", "count"],
    )


def write_bands_csv(bands: BinQuantiles, path: Path) -> None:
    bands_frame(bands).to_csv(path, index=False, lineterminator="\n")
