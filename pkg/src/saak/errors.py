"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 1, data/format/domain
errors -> 2, NumericError (incl. TrainingError) -> 3.
"""


class SaakError(Exception):
    pass


class ConfigError(SaakError, ValueError):
    pass


class UnsupportedConfigError(ConfigError):
    pass


class DataFormatError(SaakError, ValueError):
    pass


class ConsistencyError(DataFormatError):
    pass


class DataIOError(SaakError, OSError):
    pass


class DomainError(SaakError, ValueError):
    pass


class NumericError(SaakError, ArithmeticError):
    pass


class TrainingError(NumericError):
    pass
