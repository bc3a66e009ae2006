"""Flat key = value run configuration files.

The format is line-oriented text: `key = value`, `#` comments, blank
lines ignored.  `schema_version = 1` is required.  See
docs/config_schema.md for the full key table.
"""

from dataclasses import dataclass, asdict, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .optim import OPTIMIZER_KINDS, OptimizerConfig

SCHEMA_VERSION = 1


def parse_flat_config(text: str) -> dict:
    """Parse `key = value` lines into a string dict."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _as_bool(value: str, key: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


@dataclass
class RunConfig:
    """Everything one training run needs, including instrumentation knobs."""

    model: str = "mlp_mnist"
    dataset: str = "synthetic_digits"
    dataset_path: Optional[str] = None
    optimizer: str = "sgd"
    lr: float = 1e-2
    weight_decay: float = 1e-4
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_all: bool = True
    loss: str = "cross_entropy"
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    train_size: Optional[int] = None
    val_size: Optional[int] = None
    patience_fraction: float = 1.0 / 3.0
    min_improvement: float = 0.01
    probe_fraction: float = 0.2
    sma_fraction: float = 0.30
    dropout_rate: float = 0.5
    metrics_enabled: bool = True
    custom_input_size: Optional[int] = None
    custom_hidden: Optional[str] = None        # comma separated widths
    custom_num_classes: Optional[int] = None
    custom_batchnorm: bool = False
    custom_dropout: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        for name in ("patience_fraction", "probe_fraction", "sma_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("cross_entropy", "mse"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.min_improvement < 0:
            raise ConfigError("min_improvement must be >= 0")

    def optimizer_config(self) -> OptimizerConfig:
        try:
            return OptimizerConfig(
                kind=self.optimizer, lr=self.lr, weight_decay=self.weight_decay,
                momentum=self.momentum, betas=(self.beta1, self.beta2), eps=self.eps,
                decay_all=self.decay_all,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def custom_model_spec(self) -> Optional[dict]:
        if self.model != "custom":
            return None
        if self.custom_input_size is None or self.custom_hidden is None \
                or self.custom_num_classes is None:
            raise ConfigError("custom model needs custom_input_size, custom_hidden, "
                              "custom_num_classes")
        hidden = [int(h) for h in str(self.custom_hidden).split(",") if h.strip()]
        return {
            "input_size": self.custom_input_size,
            "hidden": hidden,
            "num_classes": self.custom_num_classes,
            "batchnorm": self.custom_batchnorm,
            "dropout": self.custom_dropout,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        version = raw.pop("schema_version", None)
        if version is None:
            raise ConfigError("missing schema_version")
        if str(version) != str(SCHEMA_VERSION):
            raise ConfigError(f"unsupported schema_version {version!r}")
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if not isinstance(value, str):
                kwargs[key] = value
                continue
            if value == "":
                kwargs[key] = None
                continue
            target = known[key].type
            try:
                if key in ("decay_all", "metrics_enabled", "custom_batchnorm"):
                    kwargs[key] = _as_bool(value, key)
                elif key in ("epochs", "batch_size", "seed", "train_size", "val_size",
                             "custom_input_size", "custom_num_classes"):
                    kwargs[key] = int(value)
                elif key in ("lr", "weight_decay", "momentum", "beta1", "beta2", "eps",
                             "patience_fraction", "min_improvement", "probe_fraction",
                             "sma_fraction", "dropout_rate", "custom_dropout"):
                    kwargs[key] = float(value)
                else:
                    kwargs[key] = value
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {value!r} as {target}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(parse_flat_config(text))

    def to_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION}
        d.update(asdict(self))
        return d

    def to_text(self) -> str:
        lines = [f"schema_version = {SCHEMA_VERSION}"]
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                value = ""
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"
