"""Jump-table ReRAM device models, quantized crossbar training, and modeling-bias studies."""

from jumptable.device import (
    ConductanceBounds,
    DeviceDataset,
    Direction,
    JumpTablePair,
    Profile,
    apply_pulse,
    eval_profile,
    norm_ppf,
    sample_delta_g,
    trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "ConductanceBounds",
    "DeviceDataset",
    "Direction",
    "JumpTablePair",
    "Profile",
    "apply_pulse",
    "eval_profile",
    "norm_ppf",
    "sample_delta_g",
    "trajectory",
    "__version__",
]
