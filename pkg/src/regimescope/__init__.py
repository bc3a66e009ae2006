"""Deterministic ReLU-network training with activation-regime instrumentation.

The package tracks two per-batch convergence signals during training,
the mean absolute weight update and the activation-pattern flip rate on
a fixed probe set, and ships geometry probes that extract the exact
local affine map of a trained network and measure how far parameters or
inputs can move before an activation pattern flips.
"""

from .config import RunConfig
from .data import Dataset, load_dataset
from .geometry import AffineMap, StabilityReport, extract_affine, input_flip_radius, param_flip_radius
from .harness import RunResult, RunSummary, paper_mlp_grid, run_training, sweep
from .metrics import (
    ActivationPattern,
    ProbeSet,
    TrajectorySeries,
    auc,
    capture_pattern,
    delta_a,
    delta_w,
    robust_normalize,
    sma_smooth,
    speedup_ratio,
)
from .nn import LayerSpec, ParamStore, backward, build_model, forward, im2col, init_params
from .optim import OptimizerConfig, OptimizerState, step
from .prng import stream

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "Dataset",
    "load_dataset",
    "AffineMap",
    "StabilityReport",
    "extract_affine",
    "input_flip_radius",
    "param_flip_radius",
    "RunResult",
    "RunSummary",
    "paper_mlp_grid",
    "run_training",
    "sweep",
    "ActivationPattern",
    "ProbeSet",
    "TrajectorySeries",
    "auc",
    "capture_pattern",
    "delta_a",
    "delta_w",
    "robust_normalize",
    "sma_smooth",
    "speedup_ratio",
    "LayerSpec",
    "ParamStore",
    "backward",
    "build_model",
    "forward",
    "im2col",
    "init_params",
    "OptimizerConfig",
    "OptimizerState",
    "step",
    "stream",
    "__version__",
]
