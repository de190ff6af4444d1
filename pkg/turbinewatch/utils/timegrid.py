import math

import numpy as np
import pandas as pd

STEP = pd.Timedelta(minutes=10)
STEP_HOURS = 1.0 / 6.0
STEPS_PER_HOUR = 6
STEPS_PER_DAY = 144


def steps_for_hours(hours: float) -> int:
    # tolerate float noise such as 24.000000000001 h
    return int(math.floor(hours * STEPS_PER_HOUR + 1e-9))


def on_grid(timestamps: pd.Series) -> np.ndarray:
    ts = pd.DatetimeIndex(timestamps)
    return np.asarray(
        (ts.minute % 10 == 0) & (ts.second == 0) & (ts.microsecond == 0) & (ts.nanosecond == 0)
    )


def grid_positions(timestamps: pd.Series, origin: pd.Timestamp) -> np.ndarray:
    """Integer step offsets of on-grid timestamps relative to ``origin``."""
    delta = pd.DatetimeIndex(timestamps) - origin
    return np.asarray(delta // STEP, dtype=np.int64)


def format_utc(timestamps) -> np.ndarray:
    return np.asarray(pd.DatetimeIndex(timestamps).strftime("%Y-%m-%dT%H:%M:%SZ"), dtype=object)
