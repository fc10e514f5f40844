"""dynlab: a numerical laboratory for dissipative temporal encoding and spiking networks."""

__version__ = "0.1.0"

from dynlab.systems import (
    SystemSpec,
    EncodingConfig,
    Trajectory,
    DivergenceError,
    init_state,
    derivative,
    jacobian,
    integrate,
    encode_features,
)

__all__ = [
    "SystemSpec",
    "EncodingConfig",
    "Trajectory",
    "DivergenceError",
    "init_state",
    "derivative",
    "jacobian",
    "integrate",
    "encode_features",
]
