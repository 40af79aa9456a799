"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An argument violates a documented precondition (shape, range, rank)."""


class ConfigError(ValueError):
    """A configuration object is internally inconsistent.

    The message names the offending field.
    """


class BackendError(RuntimeError):
    """A dense linear-algebra backend failed to converge."""
