"""Exception types shared across the package.

Everything raised on purpose derives from KaaError so callers (and the CLI)
can tell deliberate contract failures apart from genuine bugs.
"""


class KaaError(Exception):
    """Base class for all deliberate errors raised by this package."""


class ShapeError(KaaError, ValueError):
    """Operands have incompatible shapes or ranks."""


class ParameterError(KaaError, ValueError):
    """An argument value is outside its documented domain."""


class DegenerateInputError(KaaError, ValueError):
    """Numerically meaningless input, e.g. a zero vector fed to cosine."""


class ContractViolationError(KaaError, RuntimeError):
    """An internal precondition that callers must uphold was violated."""


class TrainingDivergenceError(KaaError, RuntimeError):
    """Loss or gradients stopped being finite during optimization."""

    def __init__(self, message: str, epoch: int | None = None, param: str | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.param = param


class GraphParseError(KaaError, ValueError):
    """A graph file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f" ({path}" + (f":{line}" if line is not None else "") + ")"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class GraphConsistencyError(KaaError, ValueError):
    """Graph pieces disagree with each other (ids, row counts, masks)."""


class SizeError(KaaError, ValueError):
    """A computation was requested at a size the exhaustive path refuses."""


class DegeneracyError(KaaError, ValueError):
    """Geometric degeneracy, e.g. duplicate rows in an angular sweep."""


class TheoremCheckError(KaaError, RuntimeError):
    """A numerical check of a proved ordering or bound failed."""
