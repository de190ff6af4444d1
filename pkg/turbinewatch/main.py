import logging
from pathlib import Path
from typing import Annotated, Optional

import typer

from . import __version__
from .commands.clean import cmd_clean
from .commands.common import state
from .commands.diagnose import cmd_diagnose
from .commands.monitor import cmd_monitor
from .commands.report import cmd_report
from .commands.simulate import cmd_simulate
from .commands.train import cmd_train
from .config import LOG_LEVEL, METRICS_FILE
from .telemetry import init_logging


logger = logging.getLogger(__name__)

app = typer.Typer(
    name="turbinewatch",
    help="Wind turbine SCADA power-curve monitoring and underperformance detection.",
    no_args_is_help=True,
    add_completion=False,
)


@app.callback()
def main(
    log_level: Annotated[str, typer.Option("--log-level", help="DEBUG, INFO, WARNING or ERROR.")] = LOG_LEVEL,
    metrics_file: Annotated[
        Optional[Path], typer.Option("--metrics-file", help="Write prometheus metrics here after the run.")
    ] = None,
):
    init_logging(log_level)
    state["metrics_file"] = metrics_file or METRICS_FILE
    logger.debug("turbinewatch %s", __version__)


app.command("simulate")(cmd_simulate)
app.command("clean")(cmd_clean)
app.command("train")(cmd_train)
app.command("monitor")(cmd_monitor)
app.command("diagnose")(cmd_diagnose)
app.command("report")(cmd_report)


def run() -> None:
    app()


if __name__ == "__main__":
    run()
