"""Layer descriptions and the convolution unfolding kernels.

A model is a plain list of LayerSpec values; all numerics live in the
engine module.  Everything runs in float64.
"""

from dataclasses import dataclass, asdict
from typing import Optional, Tuple

import numpy as np

LAYER_KINDS = ("dense", "relu", "batchnorm1d", "dropout", "conv2d", "maxpool2d", "flatten")


def _pair(v) -> Tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a model.  Use the factory methods, not the constructor."""

    kind: str
    in_features: Optional[int] = None
    out_features: Optional[int] = None
    num_features: Optional[int] = None
    momentum: float = 0.1
    eps: float = 1e-5
    rate: float = 0.5
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    kernel: Optional[Tuple[int, int]] = None
    stride: Optional[Tuple[int, int]] = None
    padding: Optional[Tuple[int, int]] = None

    @staticmethod
    def dense(in_features: int, out_features: int) -> "LayerSpec":
        if in_features < 1 or out_features < 1:
            raise ValueError("dense dimensions must be positive")
        return LayerSpec("dense", in_features=in_features, out_features=out_features)

    @staticmethod
    def relu() -> "LayerSpec":
        return LayerSpec("relu")

    @staticmethod
    def batchnorm1d(num_features: int, momentum: float = 0.1, eps: float = 1e-5) -> "LayerSpec":
        if num_features < 1:
            raise ValueError("batchnorm1d num_features must be positive")
        if eps <= 0:
            raise ValueError("batchnorm1d eps must be > 0")
        if not 0.0 <= momentum <= 1.0:
            raise ValueError("batchnorm1d momentum must be in [0, 1]")
        return LayerSpec("batchnorm1d", num_features=num_features, momentum=momentum, eps=eps)

    @staticmethod
    def dropout(rate: float) -> "LayerSpec":
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        return LayerSpec("dropout", rate=rate)

    @staticmethod
    def conv2d(in_channels: int, out_channels: int, kernel, stride=1, padding=0) -> "LayerSpec":
        kh, kw = _pair(kernel)
        if min(in_channels, out_channels, kh, kw) < 1:
            raise ValueError("conv2d channels and kernel must be positive")
        return LayerSpec(
            "conv2d",
            in_channels=in_channels,
            out_channels=out_channels,
            kernel=(kh, kw),
            stride=_pair(stride),
            padding=_pair(padding),
        )

    @staticmethod
    def maxpool2d(kernel, stride=None) -> "LayerSpec":
        kh, kw = _pair(kernel)
        if min(kh, kw) < 1:
            raise ValueError("maxpool2d kernel must be positive")
        s = _pair(stride) if stride is not None else (kh, kw)
        return LayerSpec("maxpool2d", kernel=(kh, kw), stride=s)

    @staticmethod
    def flatten() -> "LayerSpec":
        return LayerSpec("flatten")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        for key in ("kernel", "stride", "padding"):
            if key in d:
                d[key] = list(d[key])
        return d

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        d = dict(d)
        kind = d.pop("kind")
        if kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind: {kind!r}")
        for key in ("kernel", "stride", "padding"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        return LayerSpec(kind, **d)


def conv_output_hw(h: int, w: int, kernel, stride, padding) -> Tuple[int, int]:
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    return oh, ow


def im2col(x: np.ndarray, kernel, stride=1, padding=0) -> np.ndarray:
    """Unfold conv patches of a (N, C, H, W) batch into a 2-D matrix.

    Returns shape (N * out_h * out_w, C * kh * kw): one row per output
    position (ordered n, then rows, then cols of the output map), entries
    within a row ordered (channel, kernel row, kernel col).  Convolution
    is then `im2col(x) @ W.reshape(out_c, -1).T`.
    """
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4:
        raise ValueError(f"im2col expects (N, C, H, W) input, got shape {x.shape}")
    n, c, h, w = x.shape
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ValueError(
            f"kernel {(kh, kw)} larger than padded input {(h + 2 * ph, w + 2 * pw)}"
        )
    if ph or pw:
        xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
        xp[:, :, ph:ph + h, pw:pw + w] = x
    else:
        xp = x
    # (N, C, oh', ow', kh, kw) with stride applied by slicing
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw, :, :]
    oh, ow = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def col2im(cols: np.ndarray, x_shape, kernel, stride=1, padding=0) -> np.ndarray:
    """Scatter-add im2col rows back onto the input grid (adjoint of im2col)."""
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n, c, h, w = x_shape
    oh, ow = conv_output_hw(h, w, (kh, kw), (sh, sw), (ph, pw))
    hp, wp = h + 2 * ph, w + 2 * pw
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)

    # flat padded-grid index for every (row, entry) of the cols matrix
    oy = np.repeat(np.arange(oh), ow)            # (oh*ow,)
    ox = np.tile(np.arange(ow), oh)
    ky = np.repeat(np.arange(kh), kw)            # (kh*kw,)
    kx = np.tile(np.arange(kw), kh)
    ys = oy[:, None] * sh + ky[None, :]          # (oh*ow, kh*kw)
    xs = ox[:, None] * sw + kx[None, :]
    pos = ys * wp + xs                           # within one channel plane

    grid = pos[None, :, :] + (np.arange(c) * (hp * wp))[:, None, None]  # (C, oh*ow, kh*kw)
    grid = grid.transpose(1, 0, 2).reshape(oh * ow, c * kh * kw)

    flat = out.reshape(n, c * hp * wp)
    for i in range(n):
        np.add.at(flat[i], grid.ravel(), cols[i * oh * ow:(i + 1) * oh * ow].ravel())
    return out[:, :, ph:ph + h, pw:pw + w]
