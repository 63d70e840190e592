"""Exception hierarchy.

``InputError`` subclasses describe bad files or arguments (CLI exit 1);
``DomainError`` subclasses describe requests that are well formed but cannot
be served by the trained model (CLI exit 2).
"""


class RecommenderError(Exception):
    """Base class for every error raised by this package."""


class InputError(RecommenderError):
    pass


class DomainError(RecommenderError):
    pass


class MissingFile(InputError):
    pass


class MalformedRecord(InputError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class RatingOutOfRange(MalformedRecord):
    pass


class EmptyInput(InputError):
    pass


class InvalidParameter(InputError):
    pass


class UnknownUser(DomainError):
    pass


class UnknownItem(DomainError):
    pass


class KindMismatch(DomainError):
    pass


class SchemeMismatch(DomainError):
    pass


class MissingWeight(DomainError):
    pass


class UntrainedEngine(DomainError):
    pass


class EmptyTestSet(DomainError):
    pass


class NoEvaluableUsers(DomainError):
    pass


class InvalidLimit(InvalidParameter):
    pass


class AlphaOutOfRange(InvalidParameter):
    pass
