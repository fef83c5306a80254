"""Architecture search and constructive training for dense feedforward networks."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ArchforgeError,
    BadMagicError,
    ConfigError,
    ContractError,
    CountMismatchError,
    DataError,
    DivergenceError,
    NumericalError,
    TruncatedIdxError,
)
from .network import ArchitectureSpec, CascadeNetwork, LayeredNetwork  # noqa: E402
from .numerics import Rng  # noqa: E402
from .training import TrainConfig, fit  # noqa: E402

__all__ = [
    "ArchforgeError", "BadMagicError", "ConfigError", "ContractError", "CountMismatchError",
    "DataError", "DivergenceError", "NumericalError", "TruncatedIdxError",
    "ArchitectureSpec", "CascadeNetwork", "LayeredNetwork", "Rng", "TrainConfig", "fit",
]
