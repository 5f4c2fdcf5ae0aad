"""Differentiable image-editing chains with fitted operation parameters."""

from .imgcore import hsv_to_rgb, l1_distance, laplacian, rgb_to_hsv
from .omn import (
    EditScript,
    FitConfig,
    Step,
    Trace,
    canonical_order,
    execute,
    fit_parameters,
    random_edit,
)
from .ops import GLOBAL, OpKind, apply_op

__version__ = "0.1.0"

__all__ = [
    "GLOBAL",
    "EditScript",
    "FitConfig",
    "OpKind",
    "Step",
    "Trace",
    "apply_op",
    "canonical_order",
    "execute",
    "fit_parameters",
    "hsv_to_rgb",
    "l1_distance",
    "laplacian",
    "random_edit",
    "rgb_to_hsv",
]
