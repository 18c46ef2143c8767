from typing import List, Optional


class FbmLabError(Exception):
    pass


class DomainError(FbmLabError, ValueError):
    """Argument outside the mathematical domain of the operation (negative time, H outside (0,1), ...)."""


class EmbeddingError(FbmLabError, ValueError):
    def __init__(self, min_eigenvalue: float):
        super().__init__(f"circulant embedding is not nonnegative definite: min eigenvalue {min_eigenvalue:.3e}")
        self.min_eigenvalue = min_eigenvalue


class ResourceError(FbmLabError, ValueError):
    pass


class DimensionMismatchError(FbmLabError, ValueError):
    pass


class BlowUpError(FbmLabError, ArithmeticError):
    def __init__(self, step: int, path: Optional[int] = None):
        where = f"step {step}" if path is None else f"step {step} of path {path}"
        super().__init__(f"non-finite state at {where}")
        self.step = step
        self.path = path


class OracleUnavailableError(FbmLabError, ValueError):
    pass


class OutOfRangeError(FbmLabError, ValueError):
    pass


class ResolutionError(FbmLabError, ValueError):
    pass


class DegenerateFitError(FbmLabError, ValueError):
    pass


class DegenerateSampleError(FbmLabError, ValueError):
    pass


class InsufficientSamplesError(FbmLabError, ValueError):
    pass


class InsufficientTailSamplesError(InsufficientSamplesError):
    pass


class MismatchedGridError(FbmLabError, ValueError):
    pass


class ConfigError(FbmLabError, ValueError):
    def __init__(self, messages: List[str]):
        super().__init__("; ".join(messages))
        self.messages = messages


class CorruptReportError(FbmLabError):
    pass


class ReplicationError(FbmLabError):
    """Module error raised inside one replication, annotated with its index."""

    def __init__(self, replication: int, cause: Exception):
        super().__init__(f"replication {replication}: {type(cause).__name__}: {cause}")
        self.replication = replication
        self.cause = cause
