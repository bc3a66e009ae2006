"""Forward/backward engine over LayerSpec lists.

All numerics are float64.  The forward pass records the pre-activation
of every ReLU layer (the value fed into max(., 0)) and the argmax
selection of every maxpool layer, which is everything the metric and
geometry layers need.  A neuron with pre-activation exactly zero counts
as inactive, and maxpool ties resolve to the lowest linear index inside
the window.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..errors import DivergenceError, LayerShapeError
from .layers import LayerSpec, conv_output_hw, im2col, col2im

ROLE_ORDER = {"dense": ("weight", "bias"), "conv2d": ("weight", "bias"),
              "batchnorm1d": ("bn_gamma", "bn_beta")}


@dataclass
class ParamEntry:
    layer_index: int
    role: str
    array: np.ndarray


class ParamStore:
    """Registry of trainable tensors with a canonical flat ordering.

    The order is: layers in model order, and within a layer weight then
    bias (dense/conv) or gamma then beta (batchnorm).  BN running
    statistics are non-trainable state held in `bn_state` and are not
    part of the flat vector.
    """

    def __init__(self, entries: List[ParamEntry], bn_state: dict):
        self.entries = entries
        self.bn_state = bn_state  # layer_index -> {"mean": array, "var": array}
        self._sizes = [e.array.size for e in entries]
        self.flat_len = int(sum(self._sizes))

    def to_flat(self) -> np.ndarray:
        if not self.entries:
            return np.zeros(0)
        return np.concatenate([e.array.ravel() for e in self.entries])

    def load_flat(self, vec: np.ndarray) -> None:
        if vec.shape != (self.flat_len,):
            raise ValueError(f"expected flat vector of length {self.flat_len}, got {vec.shape}")
        offset = 0
        for e in self.entries:
            n = e.array.size
            e.array[...] = vec[offset:offset + n].reshape(e.array.shape)
            offset += n

    def copy(self) -> "ParamStore":
        entries = [ParamEntry(e.layer_index, e.role, e.array.copy()) for e in self.entries]
        bn = {i: {k: v.copy() for k, v in st.items()} for i, st in self.bn_state.items()}
        return ParamStore(entries, bn)

    def decay_mask(self, decay_all: bool = True) -> np.ndarray:
        """Boolean mask over the flat vector marking decayable scalars."""
        mask = np.ones(self.flat_len, dtype=bool)
        if decay_all:
            return mask
        offset = 0
        for e in self.entries:
            if e.role != "weight":
                mask[offset:offset + e.array.size] = False
            offset += e.array.size
        return mask

    def entry_name_at(self, flat_index: int) -> str:
        offset = 0
        for e in self.entries:
            if flat_index < offset + e.array.size:
                return f"layer {e.layer_index} {e.role}"
            offset += e.array.size
        raise IndexError(flat_index)


def init_params(model: List[LayerSpec], rng: np.random.Generator) -> ParamStore:
    """Kaiming-uniform (fan-in) weights, zero biases, unit/zero BN affine."""
    entries: List[ParamEntry] = []
    bn_state = {}
    for i, spec in enumerate(model):
        if spec.kind == "dense":
            bound = np.sqrt(6.0 / spec.in_features)
            w = rng.uniform(-bound, bound, size=(spec.out_features, spec.in_features))
            entries.append(ParamEntry(i, "weight", w))
            entries.append(ParamEntry(i, "bias", np.zeros(spec.out_features)))
        elif spec.kind == "conv2d":
            kh, kw = spec.kernel
            fan_in = spec.in_channels * kh * kw
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(spec.out_channels, spec.in_channels, kh, kw))
            entries.append(ParamEntry(i, "weight", w))
            entries.append(ParamEntry(i, "bias", np.zeros(spec.out_channels)))
        elif spec.kind == "batchnorm1d":
            entries.append(ParamEntry(i, "bn_gamma", np.ones(spec.num_features)))
            entries.append(ParamEntry(i, "bn_beta", np.zeros(spec.num_features)))
            bn_state[i] = {"mean": np.zeros(spec.num_features), "var": np.ones(spec.num_features)}
    return ParamStore(entries, bn_state)


@dataclass
class ForwardTrace:
    """Per-ReLU pre-activations plus the final output of one forward pass."""

    output: np.ndarray
    relu_inputs: List[np.ndarray]
    pool_argmax: List[np.ndarray]
    mode: str
    caches: list = field(default_factory=list, repr=False)


def _params_of(store: ParamStore, layer_index: int) -> dict:
    return {e.role: e.array for e in store.entries if e.layer_index == layer_index}


def forward(model: List[LayerSpec], params: ParamStore, x: np.ndarray,
            mode: str = "eval", rng: Optional[np.random.Generator] = None) -> ForwardTrace:
    """Run the network on a batch, recording ReLU pre-activations.

    In eval mode dropout is the identity and batchnorm uses running
    statistics, so the result is deterministic given params.  In train
    mode an rng must be supplied when the model contains dropout, and
    batchnorm updates its running statistics in place.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    h = np.asarray(x, dtype=np.float64)
    relu_inputs: List[np.ndarray] = []
    pool_argmax: List[np.ndarray] = []
    caches = []

    for i, spec in enumerate(model):
        if spec.kind == "dense":
            if h.ndim != 2 or h.shape[1] != spec.in_features:
                raise LayerShapeError(i, f"dense expects (N, {spec.in_features}), got {h.shape}")
            p = _params_of(params, i)
            caches.append(("dense", h))
            h = h @ p["weight"].T + p["bias"]
        elif spec.kind == "relu":
            relu_inputs.append(h)
            caches.append(("relu", h))
            h = np.maximum(h, 0.0)
        elif spec.kind == "batchnorm1d":
            if h.ndim != 2 or h.shape[1] != spec.num_features:
                raise LayerShapeError(i, f"batchnorm1d expects (N, {spec.num_features}), got {h.shape}")
            p = _params_of(params, i)
            state = params.bn_state[i]
            if mode == "train":
                mu = h.mean(axis=0)
                var = h.var(axis=0)
                inv_std = 1.0 / np.sqrt(var + spec.eps)
                xhat = (h - mu) * inv_std
                n = h.shape[0]
                var_unbiased = var * n / (n - 1) if n > 1 else var
                state["mean"] *= 1.0 - spec.momentum
                state["mean"] += spec.momentum * mu
                state["var"] *= 1.0 - spec.momentum
                state["var"] += spec.momentum * var_unbiased
            else:
                inv_std = 1.0 / np.sqrt(state["var"] + spec.eps)
                xhat = (h - state["mean"]) * inv_std
            caches.append(("batchnorm1d", (xhat, inv_std)))
            h = p["bn_gamma"] * xhat + p["bn_beta"]
        elif spec.kind == "dropout":
            if mode == "train":
                if rng is None:
                    raise ValueError("train-mode forward through dropout requires an rng")
                keep = rng.random(h.shape) >= spec.rate
                scale = 1.0 / (1.0 - spec.rate)
                caches.append(("dropout", (keep, scale)))
                h = h * keep * scale
            else:
                caches.append(("dropout", None))
        elif spec.kind == "conv2d":
            if h.ndim != 4 or h.shape[1] != spec.in_channels:
                raise LayerShapeError(i, f"conv2d expects (N, {spec.in_channels}, H, W), got {h.shape}")
            try:
                cols = im2col(h, spec.kernel, spec.stride, spec.padding)
            except ValueError as exc:
                raise LayerShapeError(i, str(exc)) from None
            p = _params_of(params, i)
            n = h.shape[0]
            oh, ow = conv_output_hw(h.shape[2], h.shape[3], spec.kernel, spec.stride, spec.padding)
            w_flat = p["weight"].reshape(spec.out_channels, -1)
            out = cols @ w_flat.T + p["bias"]
            caches.append(("conv2d", (h.shape, cols)))
            h = out.reshape(n, oh, ow, spec.out_channels).transpose(0, 3, 1, 2)
        elif spec.kind == "maxpool2d":
            if h.ndim != 4:
                raise LayerShapeError(i, f"maxpool2d expects (N, C, H, W), got {h.shape}")
            kh, kw = spec.kernel
            sh, sw = spec.stride
            if kh > h.shape[2] or kw > h.shape[3]:
                raise LayerShapeError(i, f"pool kernel {spec.kernel} larger than input {h.shape[2:]}")
            windows = np.lib.stride_tricks.sliding_window_view(h, (kh, kw), axis=(2, 3))
            windows = windows[:, :, ::sh, ::sw, :, :]
            n, c, oh, ow = windows.shape[:4]
            flat = windows.reshape(n, c, oh, ow, kh * kw)
            arg = flat.argmax(axis=-1)  # first max: lowest linear index wins ties
            pool_argmax.append(arg)
            caches.append(("maxpool2d", (h.shape, arg)))
            h = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        elif spec.kind == "flatten":
            caches.append(("flatten", h.shape))
            h = h.reshape(h.shape[0], -1)
        else:
            raise LayerShapeError(i, f"unknown layer kind {spec.kind!r}")

    return ForwardTrace(output=h, relu_inputs=relu_inputs, pool_argmax=pool_argmax,
                        mode=mode, caches=caches)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        bad = int(np.argmax((labels < 0) | (labels >= k)))
        raise ValueError(f"invalid label {labels[bad]} at index {bad} for {k} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = exp / denom
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def _mse(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ValueError(f"mse target shape {target.shape} != prediction shape {pred.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def backward(model: List[LayerSpec], params: ParamStore, batch, loss: str = "cross_entropy",
             mode: str = "train", rng: Optional[np.random.Generator] = None,
             batch_index: Optional[int] = None) -> Tuple[float, np.ndarray]:
    """Loss and flat gradient (ParamStore order) for one batch.

    Runs its own forward pass so dropout masks are shared between the
    two passes.  Raises DivergenceError if the loss is non-finite.
    """
    x, y = batch
    if np.asarray(x).shape[0] == 0:
        raise ValueError("empty batch")
    trace = forward(model, params, x, mode=mode, rng=rng)
    if loss == "cross_entropy":
        loss_val, d = _cross_entropy(trace.output, y)
    elif loss == "mse":
        loss_val, d = _mse(trace.output, y)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    if not np.isfinite(loss_val):
        raise DivergenceError("non-finite loss", batch_index=batch_index)

    grads = {}
    for i in range(len(model) - 1, -1, -1):
        spec = model[i]
        kind, cache = trace.caches[i]
        if kind == "dense":
            xin = cache
            p = _params_of(params, i)
            grads[(i, "weight")] = d.T @ xin
            grads[(i, "bias")] = d.sum(axis=0)
            d = d @ p["weight"]
        elif kind == "relu":
            d = d * (cache > 0)
        elif kind == "batchnorm1d":
            xhat, inv_std = cache
            p = _params_of(params, i)
            grads[(i, "bn_gamma")] = (d * xhat).sum(axis=0)
            grads[(i, "bn_beta")] = d.sum(axis=0)
            dxhat = d * p["bn_gamma"]
            if trace.mode == "train":
                n = xhat.shape[0]
                d = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                d = dxhat * inv_std
        elif kind == "dropout":
            if cache is not None:
                keep, scale = cache
                d = d * keep * scale
        elif kind == "conv2d":
            in_shape, cols = cache
            p = _params_of(params, i)
            n = in_shape[0]
            d_flat = d.transpose(0, 2, 3, 1).reshape(-1, spec.out_channels)
            grads[(i, "weight")] = (d_flat.T @ cols).reshape(p["weight"].shape)
            grads[(i, "bias")] = d_flat.sum(axis=0)
            dcols = d_flat @ p["weight"].reshape(spec.out_channels, -1)
            d = col2im(dcols, in_shape, spec.kernel, spec.stride, spec.padding)
        elif kind == "maxpool2d":
            in_shape, arg = cache
            kh, kw = spec.kernel
            sh, sw = spec.stride
            n, c, oh, ow = arg.shape
            dx = np.zeros(in_shape)
            oy = np.arange(oh)[None, None, :, None]
            ox = np.arange(ow)[None, None, None, :]
            ys = oy * sh + arg // kw
            xs = ox * sw + arg % kw
            ns = np.arange(n)[:, None, None, None]
            cs = np.arange(c)[None, :, None, None]
            np.add.at(dx, (ns, cs, ys, xs), d)
            d = dx
        elif kind == "flatten":
            d = d.reshape(cache)

    flat = np.concatenate([grads[(e.layer_index, e.role)].ravel() for e in params.entries]) \
        if params.entries else np.zeros(0)
    return loss_val, flat


def evaluate_accuracy(model: List[LayerSpec], params: ParamStore, x: np.ndarray,
                      labels: np.ndarray, batch_size: int = 512) -> float:
    """Eval-mode top-1 accuracy, batched to bound memory."""
    n = x.shape[0]
    correct = 0
    for start in range(0, n, batch_size):
        out = forward(model, params, x[start:start + batch_size], mode="eval").output
        correct += int((out.argmax(axis=1) == labels[start:start + batch_size]).sum())
    return correct / n
