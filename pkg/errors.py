"""Error taxonomy shared by the library and the command line."""


class DcmtfError(Exception):
    """Base class for every library error.

    Args:
        message: Human readable description.
        stage: Pipeline stage that failed (filled in by the runner when known).
    """
    exit_code = 1

    def __init__(self, message: str = "", stage: str | None = None) -> None:
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        text = super().__str__() or self.__class__.__name__
        if self.stage:
            return f"[{self.stage}] {text}"
        return text


class ConfigError(DcmtfError):
    """Configuration, file format and data-shape problems (exit code 2)."""
    exit_code = 2


class NumericalError(DcmtfError):
    """Numerical failures during fitting or training (exit code 3)."""
    exit_code = 3


class StaleCache(DcmtfError):
    """A forward cache was used after the network it came from was updated."""


# graph and data model
class DimensionMismatch(ConfigError): ...
class DanglingEntity(ConfigError): ...
class UnknownEntity(ConfigError): ...
class InvalidEntity(ConfigError): ...
class BadBinary(ConfigError): ...
class NoSuchEdge(ConfigError): ...
class UnknownMatrix(ConfigError): ...

# array contracts
class ShapeMismatch(ConfigError): ...
class LengthMismatch(ConfigError): ...
class EmptyInput(ConfigError): ...
class BadOrdering(ConfigError): ...

# clustering contracts
class EmptyCluster(ConfigError): ...
class SingleCluster(ConfigError): ...
class MissingIndicator(ConfigError): ...
class BadStart(ConfigError): ...
class InfeasibleSpec(ConfigError): ...
class InvalidHyper(ConfigError): ...


class ParseError(ConfigError):
    """A data file could not be parsed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None) -> None:
        location = path or "<input>"
        if line is not None:
            location = f"{location}:{line}"
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line


class IndexOutOfBounds(ConfigError): ...


class IoError(ConfigError):
    """Reading or writing a file failed."""

    def __init__(self, path: str, reason: str = "") -> None:
        super().__init__(f"cannot access {path}" + (f": {reason}" if reason else ""))
        self.path = path


class ConvergenceFailure(NumericalError): ...
class NotPositiveDefinite(NumericalError): ...
class DegenerateScale(NumericalError): ...
class NumericalDivergence(NumericalError): ...
class AllTrialsDiverged(NumericalError): ...
class DomainError(NumericalError): ...
