"""Exception hierarchy.

Every error carries a stable machine-readable ``code`` (the class name unless
overridden). Messages are free text and may change.
"""


class BigSurError(Exception):
    code = "Error"

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if "code" not in cls.__dict__:
            cls.code = cls.__name__

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_dict(self) -> dict:
        out = {"error": self.code, "message": self.message}
        if self.details:
            out["details"] = self.details
        return out


# model / store
class UnknownKind(BigSurError):
    pass


class ValidationFailed(BigSurError):
    def __init__(self, message: str = "", violations=()):
        super().__init__(message or "; ".join(violations), violations=list(violations))
        self.violations = list(violations)


class StaleRevision(BigSurError):
    pass


class NotOriginSite(BigSurError):
    pass


class NotFound(BigSurError):
    pass


class CorruptSnapshot(BigSurError):
    pass


# catalog
class Duplicate(BigSurError):
    pass


class DuplicateType(Duplicate):
    pass


class CycleRejected(BigSurError):
    pass


class KindMismatch(BigSurError):
    pass


class SelfAssociation(BigSurError):
    pass


class RelationConstraint(BigSurError):
    pass


class UnknownType(NotFound):
    pass


class UnknownSite(NotFound):
    pass


class UnknownFunction(NotFound):
    pass


class UnknownEntity(NotFound):
    pass


class EmptyTypes(BigSurError):
    pass


class ConverterArity(BigSurError):
    pass


class InputOutputOverlap(BigSurError):
    pass


# query
class QuerySyntaxError(BigSurError):
    code = "SyntaxError"

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}", line=line, column=column)
        self.line = line
        self.column = column


class UnknownPredicate(BigSurError):
    pass


# lineage
class NoConversionPath(BigSurError):
    pass


# scheduler
class FunctionDisabled(BigSurError):
    pass


class IllegalTransition(BigSurError):
    pass


class NotAssignee(BigSurError):
    pass


class Unknown(NotFound):
    pass


# federation
class SealMismatch(BigSurError):
    pass


class MalformedBundle(BigSurError):
    pass


class TargetUnreachable(BigSurError):
    pass


class NoEndpoint(BigSurError):
    pass


# interfaces
class FeatureDisabled(BigSurError):
    pass


class MalformedHeader(BigSurError):
    pass


class AlreadyInitialized(BigSurError):
    pass


class NotInitialized(BigSurError):
    pass


class BindFailure(BigSurError):
    pass


class InvalidConfig(BigSurError):
    pass
