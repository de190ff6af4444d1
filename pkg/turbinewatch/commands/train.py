import logging
from pathlib import Path
from typing import Annotated

import typer

from ..config import load_settings
from ..services.ingest import parse_scada_csv
from ..services.manifest import build_manifest, write_manifest
from ..services.regressors import all_candidates, save_model, select_model, train_test_split, write_report_csv
from .common import ConfigOption, OutOption, SeedOption, cli_command, ensure_out


logger = logging.getLogger(__name__)


@cli_command("train")
def cmd_train(
    clean_csv: Annotated[Path, typer.Argument(help="Cleaned SCADA CSV.")],
    config: ConfigOption = None,
    seed: SeedOption = None,
    out: OutOption = Path("."),
):
    """Fit every algorithm and feature set, keep the lowest holdout RMSE."""
    settings = load_settings(config, seed=seed)
    records = parse_scada_csv(clean_csv, settings.turbine).records
    train, test = train_test_split(records, settings.turbine.train_ratio, settings.seed)
    logger.info("split %d records into %d train / %d test", len(records), len(train), len(test))
    selection = select_model(all_candidates(), train, test, settings)

    out = ensure_out(out)
    model_path = out / "model.joblib"
    report_path = out / "report.csv"
    save_model(selection.selected_model, model_path)
    write_report_csv(selection.report, report_path)

    best = selection.report.best
    manifest = build_manifest(
        "train",
        settings,
        inputs=[clean_csv],
        outputs=[model_path, report_path],
        summary={
            "train_rows": len(train),
            "test_rows": len(test),
            "candidates": len(selection.report.rows),
            "selected": f"{best.algorithm}/{best.feature_set.value}",
            "rmse_kw": best.rmse_kw,
            "r2": best.r2,
        },
    )
    write_manifest(manifest, out)
    typer.echo(f"selected {best.algorithm}/{best.feature_set.value} with holdout rmse {best.rmse_kw:.1f} kW")
