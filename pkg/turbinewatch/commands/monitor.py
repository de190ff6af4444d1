import logging
from pathlib import Path
from typing import Annotated, Optional

import typer

from ..config import load_settings
from ..services.ingest import parse_scada_csv
from ..services.manifest import build_manifest, write_manifest
from ..services.monitor import (
    event_window_share,
    horizon_sensitivity,
    metric_frame,
    monitor,
    track_for,
    write_events_json,
    write_metrics_csv,
    write_residual_csv,
)
from ..services.regressors import load_model
from .common import ConfigOption, OutOption, SeedOption, cli_command, ensure_out


logger = logging.getLogger(__name__)


@cli_command("monitor")
def cmd_monitor(
    input_csv: Annotated[Path, typer.Argument(help="SCADA CSV to monitor.")],
    model: Annotated[Path, typer.Option("--model", help="Model blob written by train.")],
    reference: Annotated[
        Optional[Path], typer.Option("--reference", help="SCADA CSV of a reference period fixing the threshold.")
    ] = None,
    horizon: Annotated[Optional[float], typer.Option("--horizon", help="Rolling window in hours.")] = None,
    alert_quantile: Annotated[Optional[float], typer.Option("--alert-quantile")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = Path("."),
):
    """Rolling energy residuals, alert threshold and underperformance events."""
    settings = load_settings(
        config, seed=seed, turbine_overrides={"horizon": horizon, "alert_quantile": alert_quantile}
    )
    cfg = settings.turbine
    fitted = load_model(model)
    records = parse_scada_csv(input_csv, cfg).records
    track = track_for(records, fitted, cfg)
    ref_track = None
    if reference is not None:
        ref_track = track_for(parse_scada_csv(reference, cfg).records, fitted, cfg)

    result = monitor(track, cfg, reference=ref_track)
    metrics = metric_frame(result.series, cfg.ratio_cutoff)
    horizons = horizon_sensitivity(track, cfg, reference=ref_track)

    out = ensure_out(out)
    residual_path = out / "residuals.csv"
    events_path = out / "events.json"
    metrics_path = out / "metrics.csv"
    horizons_path = out / "horizons.csv"
    write_residual_csv(result.series, residual_path)
    write_events_json(result.report, events_path)
    write_metrics_csv(metrics, metrics_path)
    horizons.to_csv(horizons_path, index=False, lineterminator="\n", na_rep="")

    inputs = [input_csv, model] + ([reference] if reference is not None else [])
    manifest = build_manifest(
        "monitor",
        settings,
        inputs=inputs,
        outputs=[residual_path, events_path, metrics_path, horizons_path],
        summary={
            "threshold_mwh": result.threshold,
            "threshold_source": result.report.threshold_source,
            "events": len(result.report.events),
            "data_quality_flags": len(result.report.data_quality_flags),
            "event_window_share": event_window_share(result.series, result.report.events),
            "lost_energy_mwh": sum(e.lost_energy_mwh for e in result.report.events),
        },
    )
    write_manifest(manifest, out)
    typer.echo(f"threshold {result.threshold:.3f} MWh, {len(result.report.events)} events")
