from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from ..models import DiagnosisReport, EventReport, UnderperformanceEvent  # noqa: E402
from ..utils.timegrid import format_utc  # noqa: E402


logger = logging.getLogger(__name__)

# fixed ids and no timestamp keep reruns byte-identical
matplotlib.rcParams["svg.hashsalt"] = "turbinewatch"
matplotlib.rcParams["svg.fonttype"] = "none"

FIGURE_NAMES = (
    "power_curve",
    "actual_vs_expected",
    "residuals",
    "event_energy",
    "event_detail",
    "pitch_comparison",
)
QQ_LEVELS = np.linspace(0.01, 0.99, 99)
HIST_BINS = 50


def _no_event(ax, label: str = "no underperformance event") -> None:
    ax.text(0.5, 0.5, label, ha="center", va="center", transform=ax.transAxes)
    ax.set_axis_off()


def power_curve_figure(clean: pd.DataFrame, bands: pd.DataFrame) -> Tuple[Figure, pd.DataFrame]:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.scatter(clean["wind_speed"], clean["power"], s=2, alpha=0.25, color="0.5", label="clean records")
    centers = (bands["bin_lo"] + bands["bin_hi"]) / 2.0
    ax.plot(centers, bands["median_kw"], color="C0", label="median")
    ax.plot(centers, bands["q_lo_kw"], color="C1", linestyle="--", label="5% / 95%")
    ax.plot(centers, bands["q_hi_kw"], color="C1", linestyle="--")
    ax.set_xlabel("wind speed [m/s]")
    ax.set_ylabel("power [kW]")
    ax.legend(loc="lower right")
    data = bands.assign(bin_center=centers)[
        ["bin_lo", "bin_hi", "bin_center", "q_lo_kw", "median_kw", "q_hi_kw", "count"]
    ]
    return fig, data


def actual_vs_expected_figure(residuals: pd.DataFrame, rated_power: float) -> Tuple[Figure, pd.DataFrame]:
    actual = residuals["power_kw"].to_numpy(dtype=float)
    expected = residuals["expected_kw"].to_numpy(dtype=float)
    rated_mw = rated_power / 1000.0
    fig, (ax_scatter, ax_qq) = plt.subplots(1, 2, figsize=(10, 4.5))
    ax_scatter.scatter(expected / 1000.0, actual / 1000.0, s=2, alpha=0.25, color="C0")
    ax_scatter.plot([0, rated_mw], [0, rated_mw], color="k", linewidth=0.8)
    ax_scatter.set_xlim(0, rated_mw)
    ax_scatter.set_ylim(0, rated_mw)
    ax_scatter.set_xlabel("expected power [MW]")
    ax_scatter.set_ylabel("actual power [MW]")

    q_actual = np.quantile(actual, QQ_LEVELS) if actual.size else np.full(QQ_LEVELS.size, np.nan)
    q_expected = np.quantile(expected, QQ_LEVELS) if expected.size else np.full(QQ_LEVELS.size, np.nan)
    ax_qq.plot(q_expected / 1000.0, q_actual / 1000.0, marker=".", linestyle="none", color="C0")
    ax_qq.plot([0, rated_mw], [0, rated_mw], color="k", linewidth=0.8)
    ax_qq.set_xlabel("expected quantiles [MW]")
    ax_qq.set_ylabel("actual quantiles [MW]")
    fig.tight_layout()
    data = pd.DataFrame({"level": QQ_LEVELS, "expected_kw": q_expected, "actual_kw": q_actual})
    return fig, data


def residuals_figure(residuals: pd.DataFrame, threshold: float) -> Tuple[Figure, pd.DataFrame]:
    valid = residuals[residuals["valid"]]
    values = valid["rolling_residual_mwh"].to_numpy(dtype=float)
    fig, (ax_hist, ax_series) = plt.subplots(2, 1, figsize=(9, 6))
    counts, edges = np.histogram(values, bins=HIST_BINS) if values.size else (np.zeros(0, int), np.zeros(1))
    if values.size:
        ax_hist.hist(values, bins=edges, color="C0")
    for level in (-threshold, threshold):
        ax_hist.axvline(level, color="C3", linestyle="--")
        ax_series.axhline(level, color="C3", linestyle="--")
    ax_hist.set_xlabel("rolling energy residual [MWh]")
    ax_hist.set_ylabel("windows")
    ax_series.plot(valid["timestamp"], values, linewidth=0.6, color="C0")
    ax_series.set_ylabel("residual [MWh]")
    fig.tight_layout()
    data = pd.DataFrame({"bin_lo_mwh": edges[:-1], "bin_hi_mwh": edges[1:], "windows": counts})
    return fig, data


def largest_event(report: EventReport) -> Optional[UnderperformanceEvent]:
    if not report.events:
        return None
    return max(report.events, key=lambda e: (e.lost_energy_mwh, -e.start.timestamp()))


def event_energy_figure(
    residuals: pd.DataFrame, event: Optional[UnderperformanceEvent]
) -> Tuple[Figure, pd.DataFrame]:
    fig, ax = plt.subplots(figsize=(9, 4))
    columns = ["timestamp", "energy_kwh", "expected_energy_kwh"]
    if event is None:
        _no_event(ax)
        return fig, pd.DataFrame(columns=columns)
    centre = pd.Timestamp(event.start)
    ts = residuals["timestamp"]
    week = residuals[(ts >= centre - pd.Timedelta(days=3)) & (ts < centre + pd.Timedelta(days=4))]
    data = pd.DataFrame(
        {
            "timestamp": week["timestamp"],
            "energy_kwh": week["power_kw"] / 6.0,
            "expected_energy_kwh": week["expected_kw"] / 6.0,
        }
    )
    ax.plot(data["timestamp"], data["expected_energy_kwh"], color="C1", label="expected")
    ax.plot(data["timestamp"], data["energy_kwh"], color="C0", label="actual")
    ax.axvspan(pd.Timestamp(event.start), pd.Timestamp(event.end), color="C3", alpha=0.15)
    ax.set_ylabel("energy per step [kWh]")
    ax.legend(loc="upper right")
    return fig, data


def event_detail_figure(
    records: pd.DataFrame, residuals: pd.DataFrame, event: Optional[UnderperformanceEvent]
) -> Tuple[Figure, pd.DataFrame]:
    columns = ["timestamp", "power_kw", "expected_kw", "wind_speed_mps", "pitch_angle_deg", "hydraulic_pressure_bar"]
    if event is None:
        fig, ax = plt.subplots(figsize=(9, 4))
        _no_event(ax)
        return fig, pd.DataFrame(columns=columns)
    lo = pd.Timestamp(event.start) - pd.Timedelta(hours=24)
    hi = pd.Timestamp(event.end) + pd.Timedelta(hours=24)
    window = records[(records["timestamp"] >= lo) & (records["timestamp"] <= hi)]
    merged = window.merge(residuals[["timestamp", "expected_kw"]], on="timestamp", how="left")
    data = pd.DataFrame(
        {
            "timestamp": merged["timestamp"],
            "power_kw": merged["power"],
            "expected_kw": merged["expected_kw"],
            "wind_speed_mps": merged["wind_speed"],
            "pitch_angle_deg": merged["pitch_angle"],
            "hydraulic_pressure_bar": merged["hydraulic_pressure"],
        }
    )
    fig, axes = plt.subplots(4, 1, figsize=(9, 9), sharex=True)
    axes[0].plot(data["timestamp"], data["expected_kw"], color="C1", label="expected")
    axes[0].plot(data["timestamp"], data["power_kw"], color="C0", label="actual")
    axes[0].set_ylabel("power [kW]")
    axes[0].legend(loc="upper right")
    axes[1].plot(data["timestamp"], data["wind_speed_mps"], color="C2")
    axes[1].set_ylabel("wind [m/s]")
    axes[2].plot(data["timestamp"], data["pitch_angle_deg"], color="C4")
    axes[2].set_ylabel("pitch [deg]")
    axes[3].plot(data["timestamp"], data["hydraulic_pressure_bar"], color="C5")
    axes[3].set_ylabel("hydraulic [bar]")
    for ax in axes:
        ax.axvspan(pd.Timestamp(event.start), pd.Timestamp(event.end), color="C3", alpha=0.15)
    fig.tight_layout()
    return fig, data


def pitch_comparison_figure(diagnosis: Optional[DiagnosisReport]) -> Tuple[Figure, pd.DataFrame]:
    columns = ["bin_lo", "bin_hi", "reference_q05", "reference_median", "reference_q95", "event_median", "exceeds"]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if diagnosis is None or not diagnosis.pitch_bins:
        _no_event(ax)
        return fig, pd.DataFrame(columns=columns)
    data = pd.DataFrame([b.model_dump() for b in diagnosis.pitch_bins])[columns]
    centers = (data["bin_lo"] + data["bin_hi"]) / 2.0
    banded = data["reference_median"].notna()
    ax.fill_between(
        centers[banded],
        data.loc[banded, "reference_q05"].astype(float),
        data.loc[banded, "reference_q95"].astype(float),
        color="C0",
        alpha=0.2,
        label="reference 5-95%",
    )
    ax.plot(centers[banded], data.loc[banded, "reference_median"].astype(float), color="C0", label="reference median")
    ax.plot(centers, data["event_median"], color="C3", marker="o", linestyle="none", label="event median")
    ax.set_xlabel("wind speed [m/s]")
    ax.set_ylabel("pitch angle [deg]")
    ax.legend(loc="upper left")
    return fig, data


def save_figure(fig: Figure, data: pd.DataFrame, out_dir: Path, name: str) -> List[Path]:
    svg_path = Path(out_dir) / f"{name}.svg"
    csv_path = Path(out_dir) / f"{name}.csv"
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    out = data.copy()
    if "timestamp" in out.columns and len(out):
        out["timestamp"] = format_utc(out["timestamp"])
    out.to_csv(csv_path, index=False, lineterminator="\n", na_rep="")
    return [svg_path, csv_path]


def render_report(
    out_dir: Path,
    *,
    clean: pd.DataFrame,
    bands: pd.DataFrame,
    residuals: pd.DataFrame,
    events: EventReport,
    diagnoses: Sequence[DiagnosisReport],
    records: pd.DataFrame,
    rated_power: float,
) -> List[Path]:
    """Write every figure as ``<name>.svg`` plus ``<name>.csv``."""
    event = largest_event(events)
    diagnosis = None
    if event is not None:
        diagnosis = next((d for d in diagnoses if d.event_start == event.start), None)
    figures = {
        "power_curve": power_curve_figure(clean, bands),
        "actual_vs_expected": actual_vs_expected_figure(residuals, rated_power),
        "residuals": residuals_figure(residuals, events.threshold_mwh),
        "event_energy": event_energy_figure(residuals, event),
        "event_detail": event_detail_figure(records, residuals, event),
        "pitch_comparison": pitch_comparison_figure(diagnosis),
    }
    written: List[Path] = []
    for name in FIGURE_NAMES:
        fig, data = figures[name]
        written += save_figure(fig, data, out_dir, name)
    logger.info("wrote %d figures to %s", len(FIGURE_NAMES), out_dir)
    return written
