"""Named model architectures.

The MLP configurations follow the experiment table (input size, class
count, hidden dims, batchnorm, dropout); lenet5 is the classic
conv-pool-conv-pool-dense stack for 28x28 single-channel images.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

from ..errors import ConfigError
from .layers import LayerSpec


@dataclass(frozen=True)
class ModelDef:
    name: str
    layers: Tuple[LayerSpec, ...]
    input_shape: Tuple[int, ...]
    num_classes: int


def mlp_layers(input_size: int, hidden: Sequence[int], num_classes: int,
               batchnorm: bool = True, dropout_rate: float = 0.0) -> List[LayerSpec]:
    layers: List[LayerSpec] = []
    prev = input_size
    for width in hidden:
        layers.append(LayerSpec.dense(prev, width))
        if batchnorm:
            layers.append(LayerSpec.batchnorm1d(width))
        layers.append(LayerSpec.relu())
        if dropout_rate > 0.0:
            layers.append(LayerSpec.dropout(dropout_rate))
        prev = width
    layers.append(LayerSpec.dense(prev, num_classes))
    return layers


def lenet5_layers() -> List[LayerSpec]:
    return [
        LayerSpec.conv2d(1, 6, 5, stride=1, padding=2),
        LayerSpec.relu(),
        LayerSpec.maxpool2d(2),
        LayerSpec.conv2d(6, 16, 5, stride=1, padding=0),
        LayerSpec.relu(),
        LayerSpec.maxpool2d(2),
        LayerSpec.flatten(),
        LayerSpec.dense(16 * 5 * 5, 120),
        LayerSpec.relu(),
        LayerSpec.dense(120, 84),
        LayerSpec.relu(),
        LayerSpec.dense(84, 10),
    ]


# name -> (input_size/shape, num_classes, hidden dims, batchnorm, dropout)
_MLP_TABLE = {
    "mlp_adult": (104, 2, (256, 128, 64), True, True),
    "mlp_breast": (30, 2, (64, 32), True, True),
    "mlp_har": (561, 6, (512, 256), True, False),
    "mlp_mnist": (784, 10, (256, 128), True, True),
}

MODEL_NAMES = tuple(_MLP_TABLE) + ("lenet5", "custom")


def build_model(name: str, dropout_rate: float = 0.5, custom: dict | None = None) -> ModelDef:
    """Instantiate a named architecture.

    `dropout_rate` applies to the MLPs that use dropout.  For
    name == 'custom', pass a dict with input_size, hidden (list of
    ints), num_classes, and optional batchnorm/dropout flags.
    """
    if name in _MLP_TABLE:
        input_size, num_classes, hidden, bn, has_dropout = _MLP_TABLE[name]
        layers = mlp_layers(input_size, hidden, num_classes, batchnorm=bn,
                            dropout_rate=dropout_rate if has_dropout else 0.0)
        return ModelDef(name, tuple(layers), (input_size,), num_classes)
    if name == "lenet5":
        return ModelDef(name, tuple(lenet5_layers()), (1, 28, 28), 10)
    if name == "custom":
        if not custom:
            raise ConfigError("custom model requires input_size, hidden, num_classes")
        try:
            input_size = int(custom["input_size"])
            hidden = [int(h) for h in custom["hidden"]]
            num_classes = int(custom["num_classes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad custom model definition: {exc}") from None
        layers = mlp_layers(
            input_size, hidden, num_classes,
            batchnorm=bool(custom.get("batchnorm", False)),
            dropout_rate=float(custom.get("dropout", 0.0)),
        )
        return ModelDef(name, tuple(layers), (input_size,), num_classes)
    raise ConfigError(f"unknown model {name!r}; known: {', '.join(MODEL_NAMES)}")
