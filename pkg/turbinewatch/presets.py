from datetime import datetime, timedelta, timezone
from typing import Callable, Dict, Optional

from .errors import ScenarioError
from .models import DirectionSector, FaultKind, FaultSpec, Scenario, SteadyWind


YEAR_START = datetime(2021, 1, 1, tzinfo=timezone.utc)
# 15 h of steady 9 m/s wind with half the power lost
INCIDENT_START = datetime(2021, 3, 16, 6, 0, tzinfo=timezone.utc)
INCIDENT_HOURS = 15
INCIDENT_SPEED = 9.0
INCIDENT_DERATE = 0.5
INCIDENT_PITCH_OFFSET = 4.0
INCIDENT_PRESSURE_DROP = 10.0


def reference_year(seed: int = 7) -> Scenario:
    return Scenario(start=YEAR_START, days=365, seed=seed, outage_rate_per_day=0.1)


def incident_year(seed: int = 11) -> Scenario:
    end = INCIDENT_START + timedelta(hours=INCIDENT_HOURS)
    return Scenario(
        start=YEAR_START,
        days=365,
        seed=seed,
        outage_rate_per_day=0.1,
        steady_wind=[SteadyWind(start=INCIDENT_START, end=end, speed=INCIDENT_SPEED)],
        faults=[
            FaultSpec(
                kind=FaultKind.PITCH_MISALIGNMENT,
                start=INCIDENT_START,
                end=end,
                magnitude=INCIDENT_PITCH_OFFSET,
                derate=INCIDENT_DERATE,
            ),
            FaultSpec(
                kind=FaultKind.HYDRAULIC_DROP,
                start=INCIDENT_START,
                end=end,
                magnitude=INCIDENT_PRESSURE_DROP,
            ),
        ],
    )


def direction_month(seed: int = 5) -> Scenario:
    return Scenario(
        start=YEAR_START,
        days=30,
        seed=seed,
        direction_derate=[DirectionSector(start_deg=200.0, end_deg=280.0, derate=0.3)],
    )


PRESETS: Dict[str, Callable[..., Scenario]] = {
    "reference_year": reference_year,
    "incident_year": incident_year,
    "direction_month": direction_month,
}


def get_preset(name: str, seed: Optional[int] = None) -> Scenario:
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return PRESETS[name]() if seed is None else PRESETS[name](seed)
