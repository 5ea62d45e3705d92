"""Error types shared by the KoopWatch modules."""


class KoopWatchError(Exception):
    """Base class for every error raised by KoopWatch."""


class DimensionMismatch(KoopWatchError):
    """Frames, operators or matrices with incompatible shapes."""


class DegenerateWindow(KoopWatchError):
    """A window that carries no information (all zeros) in strict mode."""


class NumericalFailure(KoopWatchError):
    """A linear-algebra kernel failed or produced non-finite values."""


class IrregularSampling(KoopWatchError, ValueError):
    """Frames that are not equispaced, or a non-positive sample interval."""


class InvalidParameter(KoopWatchError, ValueError):
    """A numeric parameter outside its valid range."""


class InsufficientHistory(KoopWatchError):
    """Not enough frames to run the requested operation."""


class NonPositiveEntry(KoopWatchError):
    """A probability vector with a zero or negative entry reached the KL divergence."""


class EmbeddingFailure(KoopWatchError):
    """The spectral embedding eigen-solver failed or returned non-finite vectors."""


class NumericalBlowup(KoopWatchError):
    """The simulated state left the plausible range."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class InvalidSpec(KoopWatchError):
    """An attack or event specification that cannot be applied."""


class ScenarioParseError(KoopWatchError):
    """A scenario file that is not valid JSON."""

    def __init__(self, message, path=None, line=None, column=None):
        super().__init__(message)
        self.path = path
        self.line = line
        self.column = column

    def __str__(self):
        location = self.path or "<scenario>"
        if self.line is not None:
            location += f":{self.line}:{self.column}"
        return f"{location}: {self.args[0]}"


class ScenarioValidationError(KoopWatchError):
    """A scenario value that violates the schema; `field` is the dotted key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class MissingArtifact(KoopWatchError):
    """An artifact file expected by a later pipeline stage does not exist."""
