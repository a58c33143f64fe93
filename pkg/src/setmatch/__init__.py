"""Set-to-set matching models with exchangeability guarantees.

Feature extraction couples the two input sets through cross-set
transformation layers; matching scores come from relu-averaged
cross-similarity heads. A pooling baseline with no cross-set interaction
is included for comparisons, plus seeded synthetic tasks, a training
loop, and property/gradient checking utilities behind one CLI.
"""

from .errors import (
    ConfigurationError,
    NonFiniteLossError,
    OptimizerError,
    OracleError,
    PreconditionError,
    SetMatchError,
    ShapeError,
)
from .numeric import SeededRng
from .params import ModelConfig, ModelParams
from .sets import FeatureSet

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "FeatureSet",
    "ModelConfig",
    "ModelParams",
    "NonFiniteLossError",
    "OptimizerError",
    "OracleError",
    "PreconditionError",
    "SeededRng",
    "SetMatchError",
    "ShapeError",
    "__version__",
]
