"""Exception types shared across the pipeline."""


class ContrastForgeError(Exception):
    """Base class for all package errors."""


class ParameterShapeError(ContrastForgeError):
    """A parameter vector does not match the rank of the basis it feeds."""


class InvalidParameterError(ContrastForgeError):
    """A parameter contains non-finite or otherwise unusable values."""


class SamplingError(ContrastForgeError):
    """Surface sampling is impossible (e.g. zero-area mesh)."""


class ContractError(ContrastForgeError):
    """An inter-module call violated its documented contract."""


class CapacityError(ContrastForgeError):
    """A request exceeds the available combination space."""


class ScorerError(ContrastForgeError):
    """A preference scorer failed after exhausting retries."""


class TrainingAbort(ContrastForgeError):
    """The optimization loop hit an unrecoverable condition."""
