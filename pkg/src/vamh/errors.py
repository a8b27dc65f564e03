"""Exception hierarchy shared by the samplers, oracles and the CLI."""


class VamhError(Exception):
    """Base class for all package errors."""


class ConfigurationError(VamhError, ValueError):
    """Invalid user configuration (CLI exit code 2)."""


class InvalidStateError(VamhError):
    """The chain occupies a state of zero target density."""


class DomainError(VamhError, ValueError):
    """A bound constant lies outside its admissible range."""


class SizeError(VamhError):
    """A discrete instance is too large for dense enumeration."""


class ConsistencyError(VamhError):
    """An exact kernel does not preserve the declared target."""


class MinorizationViolationError(VamhError):
    """A regeneration probability exceeded one."""


class InsufficientRegenerationsError(VamhError):
    """Too few regenerations to form the requested tours (CLI exit code 3)."""


class PathologicalTruncationError(VamhError):
    """Rejection sampling failed to hit a truncation region."""


class OracleError(VamhError):
    """Numerical quadrature did not converge."""


class BudgetExceededError(VamhError):
    """A fixed-regeneration run hit its step budget."""
