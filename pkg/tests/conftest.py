import os
import sys
from datetime import datetime, timezone

import numpy as np
import pandas as pd
import pytest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from turbinewatch.config import Settings
from turbinewatch.models import Scenario
from turbinewatch.presets import incident_year, reference_year
from turbinewatch.services.ingest import RECORD_COLUMNS
from turbinewatch.services.simulator import generate


MONTH_START = datetime(2021, 1, 1, tzinfo=timezone.utc)


def make_records(n: int = 10, start: str = "2021-01-01T00:00:00Z", **columns) -> pd.DataFrame:
    """Record frame on the 10-minute grid with plain defaults for every channel."""
    frame = pd.DataFrame(
        {
            "timestamp": pd.date_range(start, periods=n, freq="10min"),
            "wind_speed": np.full(n, 8.0),
            "wind_dir": np.full(n, 240.0),
            "air_temp": np.full(n, 10.0),
            "power": np.full(n, 1000.0),
            "pitch_angle": np.full(n, 1.0),
            "hydraulic_pressure": np.full(n, 180.0),
            "status_code": np.zeros(n, dtype=np.int64),
        }
    )
    for name, values in columns.items():
        frame[name] = values
    return frame[RECORD_COLUMNS]


@pytest.fixture
def settings():
    return Settings()


@pytest.fixture
def fast_settings():
    return Settings.model_validate(
        {
            "models": {
                "gbm": {"n_estimators": 80},
                "random_forest": {"n_estimators": 40},
            }
        }
    )


@pytest.fixture(scope="session")
def month():
    return generate(Scenario(start=MONTH_START, days=30, seed=3))


@pytest.fixture(scope="session")
def reference():
    return generate(reference_year())


@pytest.fixture(scope="session")
def incident():
    return generate(incident_year())
