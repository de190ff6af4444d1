from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import joblib
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor

from ..config import Settings
from ..errors import InsufficientDataError, ModelError
from ..models import ALGORITHM_ORDER, FeatureSet, ModelReport, ModelRow
from ..telemetry import MODEL_RMSE, observe_stage, start_timer


logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
MIN_SPLIT_ROWS = 10
MIN_TREE_ROWS = 50
# rows x training rows x features held in memory per kNN distance block
KNN_BLOCK_ELEMENTS = 4_000_000

FEATURE_COLUMNS = {
    FeatureSet.V: ("wind_speed",),
    FeatureSet.VD: ("wind_speed", "wind_dir"),
    FeatureSet.VDT: ("wind_speed", "wind_dir", "air_temp"),
}


def build_features(record: Any, feature_set: FeatureSet) -> np.ndarray:
    get = record.get if isinstance(record, dict) else lambda name: getattr(record, name)
    row = [float(get("wind_speed"))]
    if feature_set in (FeatureSet.VD, FeatureSet.VDT):
        alpha = math.radians(float(get("wind_dir")))
        row += [math.sin(alpha), math.cos(alpha)]
    if feature_set is FeatureSet.VDT:
        row.append(float(get("air_temp")))
    return np.asarray(row, dtype=float)


def build_feature_matrix(records: pd.DataFrame, feature_set: FeatureSet) -> np.ndarray:
    feature_set = FeatureSet(feature_set)
    for col in FEATURE_COLUMNS[feature_set]:
        if col not in records.columns:
            raise ModelError(f"feature set {feature_set.value} needs the {col} channel")
    speed = records["wind_speed"].to_numpy(dtype=float)
    columns = [speed]
    if feature_set in (FeatureSet.VD, FeatureSet.VDT):
        alpha = np.radians(records["wind_dir"].to_numpy(dtype=float))
        columns += [np.sin(alpha), np.cos(alpha)]
    if feature_set is FeatureSet.VDT:
        columns.append(records["air_temp"].to_numpy(dtype=float))
    matrix = np.column_stack(columns) if columns[0].size else np.empty((0, feature_set.size))
    if not np.isfinite(matrix).all():
        raise ModelError(f"feature set {feature_set.value} has missing regressor values")
    return matrix


def train_test_split(
    records: pd.DataFrame, ratio: float, seed: int
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    n = len(records)
    if not 0 < ratio < 1:
        raise ModelError(f"train ratio must lie in (0, 1), got {ratio}")
    if n < MIN_SPLIT_ROWS:
        raise InsufficientDataError(f"need at least {MIN_SPLIT_ROWS} records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(ratio * n))
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    return records.iloc[train_idx], records.iloc[test_idx]


def derive_random_state(seed: int) -> int:
    return int(np.random.SeedSequence(seed).generate_state(1)[0])


@dataclass
class FittedModel:
    algorithm: str
    feature_set: FeatureSet
    estimator: Any
    seed: int
    rated_power: float
    hyperparameters: Dict[str, Any] = field(default_factory=dict)
    train_rmse: float = float("nan")
    holdout_rmse: float = float("nan")
    holdout_r2: Optional[float] = None
    stage_losses: Optional[np.ndarray] = None
    fit_seconds: float = 0.0

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(1, -1)
        if len(features) == 0:
            return np.empty(0)
        raw = np.asarray(self.estimator.predict(features), dtype=float)
        raw = np.nan_to_num(raw, nan=0.0)
        return np.clip(raw, -self.rated_power, 1.5 * self.rated_power)

    def predict_records(self, records: pd.DataFrame) -> np.ndarray:
        return self.predict(build_feature_matrix(records, self.feature_set))


class KNNRegressor:
    """Brute-force k nearest neighbours on z-scored features.

    Ties in distance go to the lower training row index.
    """

    def __init__(self, k: int):
        self.k = k

    def fit(self, features: np.ndarray, targets: np.ndarray) -> "KNNRegressor":
        n = len(features)
        if not 1 <= self.k <= n:
            raise ModelError(f"kNN needs 1 <= k <= n, got k={self.k}, n={n}")
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        self.keep_ = std > 0
        if not self.keep_.all():
            logger.warning(
                "kNN: dropping %d zero-variance feature(s) at column(s) %s",
                int((~self.keep_).sum()),
                np.flatnonzero(~self.keep_).tolist(),
            )
        self.mean_ = mean[self.keep_]
        self.std_ = std[self.keep_]
        self.train_ = (features[:, self.keep_] - self.mean_) / self.std_
        self.targets_ = np.asarray(targets, dtype=float)
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        query = (np.asarray(features, dtype=float)[:, self.keep_] - self.mean_) / self.std_
        n_train, dims = self.train_.shape
        block = max(1, KNN_BLOCK_ELEMENTS // max(1, n_train * max(dims, 1)))
        out = np.empty(len(query))
        for lo in range(0, len(query), block):
            chunk = query[lo : lo + block]
            dist = ((chunk[:, None, :] - self.train_[None, :, :]) ** 2).sum(axis=2)
            nearest = np.argsort(dist, axis=1, kind="stable")[:, : self.k]
            out[lo : lo + block] = self.targets_[nearest].mean(axis=1)
        return out


class BinCurveRegressor:
    """Median power per wind-speed bin, interpolated between bin centres.

    Uses the first feature column (wind speed) only.
    """

    def __init__(self, bin_width: float):
        self.bin_width = bin_width

    def fit(self, features: np.ndarray, targets: np.ndarray) -> "BinCurveRegressor":
        speeds = features[:, 0]
        idx = np.floor(speeds / self.bin_width).astype(np.int64)
        medians = pd.Series(targets).groupby(idx).median()
        if len(medians) < 2:
            raise InsufficientDataError(
                f"bin curve needs at least 2 occupied bins, got {len(medians)}"
            )
        self.centers_ = (medians.index.to_numpy(dtype=float) + 0.5) * self.bin_width
        self.medians_ = medians.to_numpy(dtype=float)
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.interp(features[:, 0], self.centers_, self.medians_)


def _check_tree_rows(name: str, features: np.ndarray, targets: np.ndarray) -> None:
    if len(features) < MIN_TREE_ROWS:
        raise InsufficientDataError(
            f"{name} needs at least {MIN_TREE_ROWS} training rows, got {len(features)}"
        )
    if not np.isfinite(targets).all():
        raise ModelError(f"{name}: training targets must be finite")


def fit_gbm(features: np.ndarray, targets: np.ndarray, settings: Settings, seed: int) -> Any:
    """Squared-loss gradient boosting over every feature at each split.

    sklearn visits features in a seeded random order and keeps the first of
    equally good splits, so exact ties resolve by that order rather than by
    the lowest feature index. Fits are still reproducible for a given seed.
    """
    _check_tree_rows("gbm", features, targets)
    params = settings.models.gbm
    model = GradientBoostingRegressor(
        loss="squared_error",
        n_estimators=params.n_estimators,
        max_depth=params.max_depth,
        learning_rate=params.learning_rate,
        subsample=params.subsample,
        min_samples_leaf=params.min_samples_leaf,
        max_features=None,
        random_state=derive_random_state(seed),
    )
    return model.fit(features, targets)


def forest_max_features(setting: Any, n_features: int) -> int:
    if setting == "sqrt":
        return int(math.ceil(math.sqrt(n_features)))
    if setting == "all":
        return n_features
    return max(1, min(int(setting), n_features))


def fit_random_forest(
    features: np.ndarray, targets: np.ndarray, settings: Settings, seed: int
) -> Any:
    _check_tree_rows("random_forest", features, targets)
    params = settings.models.random_forest
    model = RandomForestRegressor(
        n_estimators=params.n_estimators,
        min_samples_leaf=params.min_samples_leaf,
        max_depth=params.max_depth,
        max_features=forest_max_features(params.max_features, features.shape[1]),
        bootstrap=params.bootstrap,
        random_state=derive_random_state(seed),
        n_jobs=1,
    )
    return model.fit(features, targets)


def fit_knn(features: np.ndarray, targets: np.ndarray, settings: Settings, seed: int) -> Any:
    return KNNRegressor(settings.models.knn.k).fit(features, targets)


def fit_bin_curve(features: np.ndarray, targets: np.ndarray, settings: Settings, seed: int) -> Any:
    return BinCurveRegressor(settings.turbine.bin_width).fit(features, targets)


Fitter = Callable[[np.ndarray, np.ndarray, Settings, int], Any]

_FITTERS: Dict[str, Fitter] = {
    "gbm": fit_gbm,
    "random_forest": fit_random_forest,
    "knn": fit_knn,
    "bin_curve": fit_bin_curve,
}


def register_algorithm(name: str, fitter: Fitter, *, replace: bool = False) -> None:
    """Make an external regressor available to select_model.

    ``fitter(features, targets, settings, seed)`` must return an object with
    a ``predict(features)`` method.
    """
    if name in _FITTERS and not replace:
        raise ModelError(f"algorithm {name!r} is already registered")
    _FITTERS[name] = fitter


def registered_algorithms() -> List[str]:
    extra = sorted(a for a in _FITTERS if a not in ALGORITHM_ORDER)
    return [a for a in ALGORITHM_ORDER if a in _FITTERS] + extra


def _hyperparameters(algorithm: str, settings: Settings) -> Dict[str, Any]:
    if algorithm == "gbm":
        return settings.models.gbm.model_dump()
    if algorithm == "random_forest":
        return settings.models.random_forest.model_dump()
    if algorithm == "knn":
        return settings.models.knn.model_dump()
    if algorithm == "bin_curve":
        return {"bin_width": settings.turbine.bin_width}
    return {}


def rmse(predicted: np.ndarray, actual: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(predicted) - np.asarray(actual)) ** 2)))


def fit_model(
    algorithm: str,
    feature_set: FeatureSet,
    train: pd.DataFrame,
    settings: Settings,
    seed: Optional[int] = None,
) -> FittedModel:
    if algorithm not in _FITTERS:
        raise ModelError(f"unknown algorithm {algorithm!r}")
    feature_set = FeatureSet(feature_set)
    seed = settings.seed if seed is None else seed
    features = build_feature_matrix(train, feature_set)
    targets = train["power"].to_numpy(dtype=float)

    started = start_timer()
    estimator = _FITTERS[algorithm](features, targets, settings, seed)
    elapsed = observe_stage(f"fit_{algorithm}", started)

    model = FittedModel(
        algorithm=algorithm,
        feature_set=feature_set,
        estimator=estimator,
        seed=seed,
        rated_power=settings.turbine.rated_power,
        hyperparameters=_hyperparameters(algorithm, settings),
        fit_seconds=elapsed,
    )
    model.train_rmse = rmse(model.predict(features), targets)
    if isinstance(estimator, GradientBoostingRegressor):
        model.stage_losses = gbm_stage_losses(estimator, features, targets)
    logger.debug(
        "fitted %s/%s on %d rows in %.2fs (train rmse %.1f kW)",
        algorithm,
        feature_set.value,
        len(features),
        elapsed,
        model.train_rmse,
    )
    return model


def gbm_stage_losses(estimator: GradientBoostingRegressor, features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    losses = [float(np.mean((targets - targets.mean()) ** 2))]
    for staged in estimator.staged_predict(features):
        losses.append(float(np.mean((targets - staged) ** 2)))
    return np.asarray(losses)


def evaluate(model: FittedModel, features: np.ndarray, targets: np.ndarray) -> Tuple[float, Optional[float]]:
    targets = np.asarray(targets, dtype=float)
    if len(targets) == 0:
        raise InsufficientDataError("cannot evaluate on an empty test set")
    predicted = model.predict(features)
    ss_res = float(np.sum((predicted - targets) ** 2))
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    r2 = None if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return rmse(predicted, targets), r2


@dataclass
class Selection:
    report: ModelReport
    models: List[FittedModel]

    @property
    def selected_model(self) -> FittedModel:
        return self.models[self.report.selected]


def all_candidates() -> List[Tuple[str, FeatureSet]]:
    return [(a, fs) for a in registered_algorithms() for fs in FeatureSet]


def _algorithm_rank(algorithm: str) -> Tuple[int, str]:
    if algorithm in ALGORITHM_ORDER:
        return (ALGORITHM_ORDER.index(algorithm), "")
    return (len(ALGORITHM_ORDER), algorithm)


def _fit_candidate(
    algorithm: str,
    feature_set: FeatureSet,
    train: pd.DataFrame,
    test: pd.DataFrame,
    settings: Settings,
) -> Tuple[Optional[FittedModel], Optional[str]]:
    try:
        model = fit_model(algorithm, feature_set, train, settings)
        model.holdout_rmse, model.holdout_r2 = evaluate(
            model, build_feature_matrix(test, feature_set), test["power"].to_numpy(dtype=float)
        )
        return model, None
    except Exception as exc:  # noqa: BLE001
        return None, f"{exc.__class__.__name__}: {exc}"


def select_model(
    candidates: Iterable[Tuple[str, FeatureSet]],
    train: pd.DataFrame,
    test: pd.DataFrame,
    settings: Settings,
) -> Selection:
    """Fit every candidate on the same split and rank by holdout RMSE.

    Ties resolve by algorithm order (gbm, random_forest, knn, bin_curve,
    then registered extras by name) and then by the smaller feature set.
    """
    candidates = [(a, FeatureSet(fs)) for a, fs in candidates]
    if not candidates:
        raise ModelError("no candidate models given")
    started = start_timer()
    results = Parallel(n_jobs=settings.n_jobs)(
        delayed(_fit_candidate)(algorithm, fs, train, test, settings) for algorithm, fs in candidates
    )
    observe_stage("select_model", started)

    fitted: List[FittedModel] = []
    for (algorithm, fs), (model, error) in zip(candidates, results):
        if model is None:
            logger.warning("candidate %s/%s failed: %s", algorithm, fs.value, error)
            continue
        fitted.append(model)
    if not fitted:
        raise ModelError("every candidate model failed to fit")

    fitted.sort(key=lambda m: (m.holdout_rmse, _algorithm_rank(m.algorithm), m.feature_set.size))
    rows = []
    for m in fitted:
        MODEL_RMSE.labels(m.algorithm, m.feature_set.value).set(m.holdout_rmse)
        rows.append(
            ModelRow(algorithm=m.algorithm, feature_set=m.feature_set, rmse_kw=m.holdout_rmse, r2=m.holdout_r2)
        )
    report = ModelReport(rows=rows, selected=0)
    best = fitted[0]
    logger.info(
        "selected %s/%s: holdout rmse %.1f kW over %d candidates",
        best.algorithm,
        best.feature_set.value,
        best.holdout_rmse,
        len(fitted),
    )
    return Selection(report=report, models=fitted)


def write_report_csv(report: ModelReport, path: Path) -> None:
    table = pd.DataFrame(
        {
            "algorithm": [row.algorithm for row in report.rows],
            "feature_set": [row.feature_set.value for row in report.rows],
            "rmse_kw": [f"{row.rmse_kw:.3f}" for row in report.rows],
            "r2": ["undefined" if row.r2 is None else f"{row.r2:.6f}" for row in report.rows],
            "selected": [int(i == report.selected) for i in range(len(report.rows))],
        },
        columns=["algorithm", "feature_set", "rmse_kw", "r2", "selected"],
    )
    table.to_csv(path, index=False, lineterminator="\n")


def save_model(model: FittedModel, path: Path) -> None:
    blob = {
        "format_version": MODEL_FORMAT_VERSION,
        "algorithm": model.algorithm,
        "feature_set": model.feature_set.value,
        "hyperparameters": model.hyperparameters,
        "seed": model.seed,
        "rated_power": model.rated_power,
        "estimator": model.estimator,
        "metrics": {
            "train_rmse": model.train_rmse,
            "holdout_rmse": model.holdout_rmse,
            "holdout_r2": model.holdout_r2,
        },
    }
    joblib.dump(blob, path)


def load_model(path: Path) -> FittedModel:
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"{path}: model file not found")
    try:
        blob = joblib.load(path)
    except Exception as exc:  # noqa: BLE001
        raise ModelError(f"{path}: unreadable model blob ({exc.__class__.__name__})")
    version = blob.get("format_version") if isinstance(blob, dict) else None
    if version != MODEL_FORMAT_VERSION:
        raise ModelError(f"{path}: model format version {version} is not {MODEL_FORMAT_VERSION}")
    metrics = blob["metrics"]
    return FittedModel(
        algorithm=blob["algorithm"],
        feature_set=FeatureSet(blob["feature_set"]),
        estimator=blob["estimator"],
        seed=blob["seed"],
        rated_power=blob["rated_power"],
        hyperparameters=blob["hyperparameters"],
        train_rmse=metrics["train_rmse"],
        holdout_rmse=metrics["holdout_rmse"],
        holdout_r2=metrics["holdout_r2"],
    )
