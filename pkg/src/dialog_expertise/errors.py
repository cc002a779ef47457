"""Exception hierarchy shared by every stage of the pipeline."""


class ExpertiseError(Exception):
    """Base class for all errors raised by this package."""


class LogParseError(ExpertiseError):
    """A session record could not be parsed.

    ``line`` is the 1-based line number inside the log stream (when known) and
    ``field`` the dotted path of the offending field.
    """

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class LogValidationError(ExpertiseError):
    """A parsed record violates a data-model invariant."""

    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        msg = invariant if not detail else f"{invariant}: {detail}"
        super().__init__(msg)


class EmptyCorpusError(ExpertiseError):
    pass


class ExtractionError(ExpertiseError):
    pass


class SchemaMismatchError(ExpertiseError):
    pass


class TrainingError(ExpertiseError):
    pass


class InfeasibleTargetError(ExpertiseError):
    pass


class ModelFileError(ExpertiseError):
    pass
