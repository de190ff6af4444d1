import json
import logging
from pathlib import Path
from typing import Annotated, Optional

import pandas as pd
import typer

from ..config import load_settings
from ..errors import IngestError
from ..models import DiagnosisReport
from ..services.figures import render_report
from ..services.ingest import parse_scada_csv
from ..services.manifest import build_manifest, write_manifest
from ..services.monitor import load_events, read_residual_csv
from .common import ConfigOption, OutOption, SeedOption, cli_command, ensure_out


logger = logging.getLogger(__name__)


def _require(path: Path) -> Path:
    if not path.is_file():
        raise IngestError(f"{path}: run artifact not found")
    return path


@cli_command("report")
def cmd_report(
    run_dir: Annotated[Path, typer.Argument(help="Directory holding clean/train/monitor/diagnose outputs.")],
    records_csv: Annotated[Path, typer.Option("--records", help="Monitored SCADA CSV.")],
    diagnosis: Annotated[Optional[Path], typer.Option("--diagnosis", help="Defaults to RUN_DIR/diagnosis.json.")] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = Path("."),
):
    """Render the figure set as SVG with the plotted data as CSV."""
    settings = load_settings(config, seed=seed)
    run_dir = Path(run_dir)
    clean_path = _require(run_dir / "clean.csv")
    bands_path = _require(run_dir / "bands.csv")
    residual_path = _require(run_dir / "residuals.csv")
    events_path = _require(run_dir / "events.json")
    diagnosis_path = diagnosis or run_dir / "diagnosis.json"

    diagnoses = []
    inputs = [clean_path, bands_path, residual_path, events_path, records_csv]
    if diagnosis_path.is_file():
        payload = json.loads(diagnosis_path.read_text(encoding="utf-8"))
        diagnoses = [DiagnosisReport.model_validate(d) for d in payload]
        inputs.append(diagnosis_path)
    else:
        logger.warning("%s not found; pitch comparison left empty", diagnosis_path)

    out = ensure_out(out)
    written = render_report(
        out,
        clean=parse_scada_csv(clean_path, settings.turbine).records,
        bands=pd.read_csv(bands_path),
        residuals=read_residual_csv(residual_path),
        events=load_events(events_path),
        diagnoses=diagnoses,
        records=parse_scada_csv(records_csv, settings.turbine).records,
        rated_power=settings.turbine.rated_power,
    )
    manifest = build_manifest(
        "report", settings, inputs=inputs, outputs=written, summary={"figures": len(written) // 2}
    )
    write_manifest(manifest, out)
    typer.echo(f"wrote {len(written) // 2} figures to {out}")
