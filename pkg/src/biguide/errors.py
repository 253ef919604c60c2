"""Exception types shared across the package."""


class BiguideError(Exception):
    """Base class for all package errors."""


class UnknownNodeError(BiguideError):
    """A node id does not resolve in the bound ontology."""


class ConfigError(BiguideError):
    """A generator or pipeline configuration is infeasible or out of range."""


class ValidationError(BiguideError):
    """Input data violates an invariant; `offenders` lists the bad items."""

    def __init__(self, message, offenders=None):
        super().__init__(message)
        self.offenders = list(offenders) if offenders else []


class ParseError(BiguideError):
    """A serialized artifact is malformed; `locus` names the line/field."""

    def __init__(self, message, locus=None):
        super().__init__(message)
        self.locus = locus


class ModelError(BiguideError):
    """A model's internal shapes or inputs are inconsistent."""


class TrainingError(BiguideError):
    """Training produced a non-finite loss; `epoch` is the failing epoch."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
