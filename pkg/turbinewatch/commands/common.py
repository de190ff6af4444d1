import functools
import logging
from pathlib import Path
from typing import Annotated, Any, Callable, Dict, Optional

import typer

from ..config import METRICS_FILE
from ..errors import TurbineWatchError
from ..telemetry import new_run_id, observe_stage, set_run_id, start_timer, write_metrics


logger = logging.getLogger(__name__)

# filled by the top-level callback before any subcommand runs
state: Dict[str, Any] = {"metrics_file": METRICS_FILE}

ConfigOption = Annotated[
    Optional[Path], typer.Option("--config", help="YAML settings file (turbine/models sections).")
]
SeedOption = Annotated[Optional[int], typer.Option("--seed", min=0, max=2**64 - 1, help="Random seed (u64).")]
OutOption = Annotated[Path, typer.Option("--out", help="Output directory.")]


def cli_command(name: str) -> Callable:
    """Run a subcommand with a fresh run id, stage timing and exit-code mapping.

    Known failures exit 1 with a one-line ``error:`` message; anything else
    is logged with its traceback and exits 2.
    """

    def decorator(fn: Callable) -> Callable:
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            set_run_id(new_run_id())
            started = start_timer()
            try:
                result = fn(*args, **kwargs)
            except TurbineWatchError as exc:
                typer.echo(f"error: {exc}", err=True)
                raise typer.Exit(code=1)
            except (typer.Exit, typer.Abort):
                raise
            except Exception:
                logger.exception("%s failed", name)
                raise typer.Exit(code=2)
            finally:
                observe_stage(name, started)
                if state.get("metrics_file"):
                    write_metrics(Path(state["metrics_file"]))
            return result

        return wrapper

    return decorator


def ensure_out(out: Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out
