import logging
from pathlib import Path
from typing import Annotated

import typer

from ..config import load_settings
from ..errors import InsufficientDataError
from ..services.diagnose import diagnose_event, write_diagnosis_json
from ..services.ingest import parse_scada_csv
from ..services.manifest import build_manifest, write_manifest
from ..services.monitor import load_events
from .common import ConfigOption, OutOption, SeedOption, cli_command, ensure_out


logger = logging.getLogger(__name__)


@cli_command("diagnose")
def cmd_diagnose(
    input_csv: Annotated[Path, typer.Argument(help="Monitored SCADA CSV.")],
    events: Annotated[Path, typer.Option("--events", help="events.json written by monitor.")],
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = Path("."),
):
    """Compare pitch and hydraulic channels during each event with the rest of its month."""
    settings = load_settings(config, seed=seed)
    report = load_events(events)
    records = parse_scada_csv(input_csv, settings.turbine).records

    diagnoses = []
    for event in report.events:
        try:
            diagnoses.append(diagnose_event(records, event, settings.turbine))
        except InsufficientDataError as exc:
            logger.warning("event %s not diagnosed: %s", event.start.isoformat(), exc)

    out = ensure_out(out)
    diagnosis_path = out / "diagnosis.json"
    write_diagnosis_json(diagnoses, diagnosis_path)
    manifest = build_manifest(
        "diagnose",
        settings,
        inputs=[input_csv, events],
        outputs=[diagnosis_path],
        summary={
            "events": len(report.events),
            "diagnosed": len(diagnoses),
            "top_channels": [d.channels[0].channel for d in diagnoses if d.channels],
        },
    )
    write_manifest(manifest, out)
    typer.echo(f"diagnosed {len(diagnoses)} of {len(report.events)} events")
