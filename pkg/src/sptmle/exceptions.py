"""Exception hierarchy shared by the estimation modules and the CLI."""


class SptmleError(Exception):
    """Base class for all package errors."""


class SpecificationError(SptmleError, ValueError):
    """Inputs do not match the mean-model specification (dimensions, labels)."""


class SingularDesignError(SptmleError):
    """The least-squares design matrix is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class InsufficientDataError(SptmleError, ValueError):
    pass


class DegenerateResidualsError(SptmleError):
    pass


class SingularInformationError(SptmleError):
    """The empirical efficient information matrix is not invertible."""

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class TargetingError(SptmleError):
    """The scalar targeting equation could not be solved."""

    def __init__(self, message, trajectory=()):
        super().__init__(message)
        self.trajectory = list(trajectory)


class FoldError(SptmleError):
    """A cross-fitting fold failed; wraps the underlying cause."""

    def __init__(self, fold, cause):
        super().__init__(f"fold {fold} failed: {cause}")
        self.fold = fold
        self.cause = cause


class NonConvergenceError(SptmleError):
    pass


class FailureBudgetExceeded(SptmleError):
    pass


class ConfigError(SptmleError, ValueError):
    """Invalid configuration file; ``line`` points into the source text when known."""

    def __init__(self, message, field=None, line=None):
        loc = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{loc}")
        self.field = field
        self.line = line


class InputDataError(SptmleError, ValueError):
    """Bad analysis input; ``row`` is the 1-based file line, ``column`` the header name."""

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column
