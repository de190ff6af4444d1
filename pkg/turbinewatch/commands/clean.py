import logging
from pathlib import Path
from typing import Annotated

import typer

from ..config import load_settings
from ..services.ingest import find_gaps, parse_scada_csv, write_rejects, write_scada_csv
from ..services.manifest import build_manifest, write_manifest
from ..services.preprocess import clean, write_bands_csv
from .common import ConfigOption, OutOption, SeedOption, cli_command, ensure_out


logger = logging.getLogger(__name__)


@cli_command("clean")
def cmd_clean(
    input_csv: Annotated[Path, typer.Argument(help="SCADA CSV to clean.")],
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = Path("."),
):
    """Drop fault-logged records and power-curve outliers."""
    settings = load_settings(config, seed=seed)
    parsed = parse_scada_csv(input_csv, settings.turbine)
    gaps = find_gaps(parsed.records)
    if gaps:
        logger.info("%s: %d gaps, %d missing steps", input_csv.name, len(gaps), sum(n for _, n in gaps))
    result = clean(parsed.records, settings.turbine)

    out = ensure_out(out)
    clean_path = out / "clean.csv"
    bands_path = out / "bands.csv"
    rejects_path = out / f"{Path(input_csv).name}.rejects.csv"
    write_scada_csv(result.clean, clean_path)
    write_bands_csv(result.bands, bands_path)
    write_rejects(parsed.rejects, rejects_path)

    summary = result.summary.as_dict()
    summary.update(
        rejected_rows=len(parsed.rejects),
        clean_records=len(result.clean),
        occupied_bins=len(result.bands.occupied),
        gaps=len(gaps),
    )
    manifest = build_manifest(
        "clean", settings, inputs=[input_csv], outputs=[clean_path, bands_path, rejects_path], summary=summary
    )
    write_manifest(manifest, out)
    typer.echo(
        f"kept {len(result.clean)} of {len(parsed.records)} records "
        f"({result.summary.status_removed} fault-logged, {result.summary.outliers_removed} outliers removed)"
    )
