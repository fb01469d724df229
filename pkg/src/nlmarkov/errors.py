"""Exception types raised across the package."""


class NlMarkovError(Exception):
    """Base class for all package errors."""


class DomainError(NlMarkovError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class InvariantError(NlMarkovError, ValueError):
    """An input violates a data-type invariant (negative density, bad mass, ...)."""


class RegistryError(NlMarkovError, KeyError):
    """Unknown coefficient-registry name or parameter."""


class GridMismatchError(NlMarkovError, ValueError):
    """Two grid objects that must share a grid do not."""


class DomainEscapeError(NlMarkovError, RuntimeError):
    """Mass (or particles) reached the edge of the computational domain."""


class StiffnessError(NlMarkovError, RuntimeError):
    """The explicit stability rule demanded more sub-steps than allowed."""


class RangeError(NlMarkovError, ValueError):
    """A frozen flow does not cover the requested time window."""


class DegenerateBandwidthError(NlMarkovError, ValueError):
    """A data-driven bandwidth rule collapsed to zero."""


class NumericError(NlMarkovError, ArithmeticError):
    """Non-finite values or a failed quadrature."""


class SetupError(NlMarkovError, RuntimeError):
    """A statistical test could not be set up; the test is aborted, not failed."""


class ConfigError(NlMarkovError, ValueError):
    """Experiment configuration failed to parse or validate.

    ``line`` is the 1-based line of the offending key when it can be located.
    """

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ArchiveError(NlMarkovError):
    """Unreadable, truncated or empty run archive."""
