"""Exception types shared across the package."""


class MetakgError(Exception):
    """Base class for all package-specific failures."""


class DimensionError(MetakgError):
    """Operand shapes do not satisfy a primitive's shape rule."""


class NumericError(MetakgError):
    """A computation produced NaN or Inf; never propagated silently."""


class ContractError(MetakgError):
    """An API precondition was violated (e.g. non-scalar loss)."""


class LineageError(MetakgError):
    """A Var was used with a tape it does not belong to."""


class DomainError(MetakgError):
    """An argument lies outside its mathematical domain."""


class ConfigError(MetakgError):
    """A configuration file or option could not be interpreted."""


class IntegrityError(MetakgError):
    """A persisted artifact is corrupt, truncated or version-mismatched."""
