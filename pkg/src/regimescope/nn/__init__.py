from .layers import LayerSpec, im2col, col2im
from .engine import (
    ParamStore,
    ParamEntry,
    ForwardTrace,
    init_params,
    forward,
    backward,
    evaluate_accuracy,
)
from .models import ModelDef, build_model, MODEL_NAMES

__all__ = [
    "LayerSpec",
    "im2col",
    "col2im",
    "ParamStore",
    "ParamEntry",
    "ForwardTrace",
    "init_params",
    "forward",
    "backward",
    "evaluate_accuracy",
    "ModelDef",
    "build_model",
    "MODEL_NAMES",
]
