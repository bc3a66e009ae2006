"""Shared test fixtures: random model builders and independent oracles.

Oracles here are deliberately naive (nested loops, explicit slices,
fsum) so they stay independent of the library's vectorized paths.
"""

import math

import numpy as np

from regimescope.nn import LayerSpec, ParamStore, init_params
from regimescope.nn.engine import ParamEntry


def random_mlp(rng, in_dim=None, out_dim=None, max_width=32, max_depth=3,
               batchnorm=False, dropout=0.0):
    """Random small MLP; returns (layers, in_dim, out_dim)."""
    in_dim = in_dim or int(rng.integers(2, 9))
    out_dim = out_dim or int(rng.integers(2, 6))
    depth = int(rng.integers(1, max_depth + 1))
    widths = [int(rng.integers(2, max_width + 1)) for _ in range(depth)]
    layers = []
    prev = in_dim
    for w in widths:
        layers.append(LayerSpec.dense(prev, w))
        if batchnorm:
            layers.append(LayerSpec.batchnorm1d(w))
        layers.append(LayerSpec.relu())
        if dropout > 0:
            layers.append(LayerSpec.dropout(dropout))
        prev = w
    layers.append(LayerSpec.dense(prev, out_dim))
    return layers, in_dim, out_dim


def random_lenet_lite(rng):
    """LeNet-shaped net scaled down for finite-difference checks."""
    c1 = int(rng.integers(2, 4))
    c2 = int(rng.integers(2, 5))
    hidden = int(rng.integers(4, 9))
    out_dim = int(rng.integers(2, 5))
    side = 8  # 8 -> conv3 -> 6 -> pool -> 3 -> conv2 -> 2 -> flatten
    layers = [
        LayerSpec.conv2d(1, c1, 3, stride=1, padding=0),
        LayerSpec.relu(),
        LayerSpec.maxpool2d(2),
        LayerSpec.conv2d(c1, c2, 2, stride=1, padding=0),
        LayerSpec.relu(),
        LayerSpec.flatten(),
        LayerSpec.dense(c2 * 2 * 2, hidden),
        LayerSpec.relu(),
        LayerSpec.dense(hidden, out_dim),
    ]
    return layers, (1, side, side), out_dim


def identity_mlp(dim=2):
    """dense(I) -> relu -> dense(I), zero biases."""
    layers = [LayerSpec.dense(dim, dim), LayerSpec.relu(), LayerSpec.dense(dim, dim)]
    entries = [
        ParamEntry(0, "weight", np.eye(dim)),
        ParamEntry(0, "bias", np.zeros(dim)),
        ParamEntry(2, "weight", np.eye(dim)),
        ParamEntry(2, "bias", np.zeros(dim)),
    ]
    return layers, ParamStore(entries, {})


def central_difference_gradient(loss_fn, w0, step=1e-6):
    """Central finite differences of a scalar loss over a flat vector."""
    grad = np.zeros_like(w0)
    for j in range(w0.size):
        wp = w0.copy()
        wp[j] += step
        wm = w0.copy()
        wm[j] -= step
        grad[j] = (loss_fn(wp) - loss_fn(wm)) / (2.0 * step)
    return grad


def conv2d_naive(x, weight, bias, stride=1, padding=0):
    """Nested-loop convolution oracle over (N, C, H, W)."""
    if isinstance(stride, int):
        stride = (stride, stride)
    if isinstance(padding, int):
        padding = (padding, padding)
    n, c, h, w = x.shape
    out_c, _, kh, kw = weight.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + w] = x
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, out_c, oh, ow))
    for ni in range(n):
        for oc in range(out_c):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += weight[oc, ci, ky, kx] * xp[ni, ci, oy * sh + ky, ox * sw + kx]
                    out[ni, oc, oy, ox] = acc + bias[oc]
    return out


def sma_naive(raw, window):
    """O(T * window) re-averaging oracle for the trailing moving average."""
    raw = np.asarray(raw, dtype=np.float64)
    out = np.empty_like(raw)
    for i in range(raw.size):
        lo = max(0, i - window + 1)
        out[i] = raw[lo:i + 1].mean()
    return out


def percentile_sorted(values, q):
    """Sort-based percentile with linear interpolation between order stats."""
    s = sorted(float(v) for v in values)
    if len(s) == 1:
        return s[0]
    pos = (q / 100.0) * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    frac = pos - lo
    return s[lo] + frac * (s[hi] - s[lo])


def normalize_naive(series):
    q_lo = percentile_sorted(series, 0.5)
    q_hi = percentile_sorted(series, 99.5)
    if q_hi == q_lo:
        return np.zeros(len(series))
    out = (np.asarray(series, dtype=np.float64) - q_lo) / (q_hi - q_lo)
    return np.clip(out, 0.0, 1.0)


def delta_w_fsum(prev, curr):
    """Two-pass exact-summation oracle for the mean absolute update."""
    diffs = [abs(float(c) - float(p)) for p, c in zip(prev, curr)]
    return math.fsum(diffs) / len(diffs)


def delta_a_naive(prev_masks, curr_masks):
    """Recount the flip fraction from unpacked boolean masks."""
    per_layer = []
    for a, b in zip(prev_masks, curr_masks):
        flips = 0
        total = 0
        for row_a, row_b in zip(a, b):
            for bit_a, bit_b in zip(row_a, row_b):
                flips += int(bool(bit_a) != bool(bit_b))
                total += 1
        per_layer.append(flips / total)
    return sum(per_layer) / len(per_layer)


def kink_free_input(layers, params, rng, in_shape, margin=1e-3, batch=4, tries=200):
    """Sample inputs until every |pre-activation| exceeds the margin."""
    from regimescope.nn import forward

    for _ in range(tries):
        x = rng.standard_normal((batch,) + tuple(in_shape))
        trace = forward(layers, params, x, mode="eval")
        if all(np.abs(z).min() > margin for z in trace.relu_inputs):
            return x
    raise AssertionError("could not find a kink-free input")


def fresh_params(layers, seed=0):
    from regimescope.prng import stream

    return init_params(layers, stream(seed, "init"))
