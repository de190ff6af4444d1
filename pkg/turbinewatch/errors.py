class TurbineWatchError(Exception):
    """Base class for every failure the CLI reports as a one-line diagnostic."""


class ConfigError(TurbineWatchError):
    pass


class IngestError(TurbineWatchError):
    pass


class SchemaError(IngestError):
    pass


class InsufficientDataError(TurbineWatchError):
    pass


class ModelError(TurbineWatchError):
    pass


class ScenarioError(TurbineWatchError):
    pass
