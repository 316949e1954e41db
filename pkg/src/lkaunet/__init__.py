"""Decomposed large-kernel attention for 3D volumes, on numpy."""
from .complexity import (
    complexity_report,
    dilation_residual,
    nprm_decomposed,
    nprm_original,
    solve_optimal_dilation,
    table_report,
)
from .conv3d import ConvSpec, conv3d, conv3d_oracle, conv3d_transposed
from .lk_attention import FULL_PLANS, LKAModule, LKAPlan, lka_forward, plan_decomposition
from .tensor_core import Rng

__version__ = "0.1.0"

__all__ = [
    "FULL_PLANS",
    "ConvSpec",
    "LKAModule",
    "LKAPlan",
    "Rng",
    "complexity_report",
    "conv3d",
    "conv3d_oracle",
    "conv3d_transposed",
    "dilation_residual",
    "lka_forward",
    "nprm_decomposed",
    "nprm_original",
    "plan_decomposition",
    "solve_optimal_dilation",
    "table_report",
]
