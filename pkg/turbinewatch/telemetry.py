import logging
import time
import uuid
from contextvars import ContextVar
from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile


_run_id_ctx: ContextVar[str] = ContextVar("turbinewatch_run_id", default="-")

REGISTRY = CollectorRegistry()

RECORD_COUNTER = Counter(
    "turbinewatch_records_total",
    "Records seen per pipeline stage and outcome",
    ["stage", "outcome"],
    registry=REGISTRY,
)
STAGE_LATENCY = Histogram(
    "turbinewatch_stage_seconds",
    "Wall time per pipeline stage",
    ["stage"],
    buckets=(0.1, 0.5, 1.0, 5.0, 15.0, 60.0, 300.0),
    registry=REGISTRY,
)
EVENTS_DETECTED = Gauge(
    "turbinewatch_events_detected",
    "Underperformance events found by the last monitor run",
    registry=REGISTRY,
)
MODEL_RMSE = Gauge(
    "turbinewatch_model_rmse_kw",
    "Holdout RMSE per candidate model",
    ["algorithm", "feature_set"],
    registry=REGISTRY,
)


def set_run_id(run_id: str) -> None:
    _run_id_ctx.set(run_id)


def get_run_id() -> str:
    return _run_id_ctx.get()


def new_run_id() -> str:
    return uuid.uuid4().hex[:12]


class RunContextFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:  # pragma: no cover - trivial
        record.run_id = get_run_id()
        return True


def init_logging(level: str = "INFO") -> None:
    handler = logging.StreamHandler()
    handler.addFilter(RunContextFilter())
    formatter = logging.Formatter(
        "%(asctime)s %(levelname)s [%(run_id)s] %(name)s - %(message)s"
    )
    handler.setFormatter(formatter)
    root = logging.getLogger()
    if not root.handlers:
        root.addHandler(handler)
    root.setLevel(level.upper())


def start_timer() -> float:
    return time.perf_counter()


def observe_stage(stage: str, started: float) -> float:
    duration = time.perf_counter() - started
    STAGE_LATENCY.labels(stage).observe(duration)
    return duration


def count_records(stage: str, outcome: str, amount: int) -> None:
    RECORD_COUNTER.labels(stage, outcome).inc(amount)


def write_metrics(path: Path) -> None:
    write_to_textfile(str(path), REGISTRY)
