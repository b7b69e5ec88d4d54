class AtdError(Exception):
    "Base class for all atd exceptions"


class ConfigError(AtdError, ValueError):
    """
    Invalid experiment configuration.

    :param message: human readable description
    :param key: dotted path of the offending configuration key, if known
    """

    def __init__(self, message: str, key: str | None = None):
        self.key: str | None = key
        super().__init__(f"{key}: {message}" if key else message)


class InvalidRangeError(ConfigError):
    pass


class DuplicateSeedError(ConfigError):
    pass


class BudgetExceedsStepsError(ConfigError):
    pass


class DimensionMismatchError(AtdError, ValueError):
    pass


class InvalidPriorError(AtdError, ValueError):
    pass


class UnknownLocationError(AtdError, IndexError):
    pass


class RepeatMeasurementError(AtdError):
    pass


class ExhaustedCandidatesError(AtdError):
    pass


class EmptyDatasetError(AtdError, ValueError):
    pass


class EmptyResultsError(AtdError, ValueError):
    pass


class SceneParseError(AtdError, ValueError):
    pass


class OracleSizeError(AtdError, ValueError):
    pass
