"""Few-shot 2D regression meta-learning with a learned graph memory."""

__version__ = "0.1.0"

from . import autodiff  # noqa: F401
from .errors import (  # noqa: F401
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    IntegrityError,
    LineageError,
    MetakgError,
    NumericError,
)
