import logging
from pathlib import Path
from typing import Annotated, Optional

import typer
from pydantic import ValidationError

from ..config import load_settings
from ..errors import ScenarioError
from ..models import Scenario
from ..presets import get_preset
from ..services.ingest import write_scada_csv
from ..services.manifest import build_manifest, write_manifest
from ..services.simulator import dump_scenario, generate, load_scenario, truth_path_for, write_truth_csv
from .common import ConfigOption, OutOption, SeedOption, cli_command, ensure_out


logger = logging.getLogger(__name__)


@cli_command("simulate")
def cmd_simulate(
    scenario: Annotated[Optional[Path], typer.Option("--scenario", help="Scenario YAML file.")] = None,
    preset: Annotated[Optional[str], typer.Option("--preset", help="Built-in scenario name.")] = None,
    days: Annotated[Optional[float], typer.Option("--days", min=0.0, help="Override the scenario duration.")] = None,
    name: Annotated[str, typer.Option("--name", help="Base name of the SCADA CSV.")] = "scada",
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = Path("."),
):
    """Generate a synthetic SCADA CSV and its ground-truth sidecar."""
    if scenario is not None and preset is not None:
        raise ScenarioError("give either --scenario or --preset, not both")
    settings = load_settings(config, seed=seed)
    spec = load_scenario(scenario) if scenario is not None else get_preset(preset or "reference_year")
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if days is not None:
        updates["days"] = days
    if updates:
        try:
            spec = Scenario.model_validate({**spec.model_dump(), **updates})
        except ValidationError as exc:
            raise ScenarioError(f"invalid scenario override: {exc.errors()[0]['msg']}")

    out = ensure_out(out)
    records, truth = generate(spec)
    scada_path = out / f"{name}.csv"
    truth_path = truth_path_for(scada_path)
    scenario_path = out / f"{name}.scenario.yaml"
    write_scada_csv(records, scada_path)
    write_truth_csv(truth, truth_path)
    dump_scenario(spec, scenario_path)

    manifest = build_manifest(
        "simulate",
        settings,
        inputs=[scenario] if scenario is not None else [],
        outputs=[scada_path, truth_path, scenario_path],
        summary={
            "records": len(records),
            "scenario_seed": spec.seed,
            "injected_deficit_kwh": truth.total_deficit_kwh,
            "fault_deficits_kwh": truth.fault_deficits_kwh,
            "outage_steps": truth.outage_steps,
            "outliers": len(truth.outlier_timestamps),
        },
    )
    write_manifest(manifest, out)
    typer.echo(f"wrote {len(records)} records to {scada_path}")
