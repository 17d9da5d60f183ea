"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to: 2 for bad
input or configuration, 3 for internal contract violations.
"""


class RiskboostError(Exception):
    exit_code = 3


class InputError(RiskboostError):
    exit_code = 2


class IngestionError(InputError):
    pass


class ConfigError(InputError):
    pass


class ModelLoadError(InputError):
    pass


class SimulationError(InputError):
    pass


class SplitError(InputError):
    pass


class ContractError(RiskboostError, ValueError):
    pass


class SelectionError(RiskboostError):
    pass


class TrainingError(RiskboostError):
    pass


class TuningError(RiskboostError):
    pass


class MetricsError(RiskboostError):
    pass


class ExplanationError(RiskboostError):
    pass


class AnalysisError(RiskboostError):
    pass
