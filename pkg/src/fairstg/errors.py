"""Exception hierarchy. Each family maps to a CLI exit code."""


class FairSTGError(Exception):
    exit_code = 1


class ConfigError(FairSTGError):
    exit_code = 2


class ParameterError(ConfigError, ValueError):
    pass


class DataError(FairSTGError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class DegenerateStdError(DataError):
    pass


class TrainingError(FairSTGError):
    exit_code = 4
