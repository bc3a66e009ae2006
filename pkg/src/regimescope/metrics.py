"""Per-batch convergence metrics over weights and activation patterns.

Two per-batch scalars are tracked during training: the mean absolute
parameter update (delta_w) and the fraction of ReLU activation bits that
flip on a fixed probe set (delta_a).  Each raw trajectory is smoothed
with a trailing simple moving average, normalized with a robust
percentile min-max, and summarized by the mean of the normalized curve
(its AUC).  The ratio AUC_W / AUC_P is the activation-over-weight
stabilization speedup.
"""

import csv
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .nn.engine import ParamStore, forward
from .nn.layers import LayerSpec

PROBE_FRACTION = 0.2
SMA_FRACTION = 0.30
PERCENTILE_LO = 0.5
PERCENTILE_HI = 99.5

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint32)


@dataclass(frozen=True)
class ActivationPattern:
    """Bit-packed ReLU masks for a set of probe inputs.

    One uint8 row per probe sample per ReLU layer; a bit is 1 iff the
    pre-activation is strictly positive (eval mode).  Padding bits in the
    last byte of a row are always zero.
    """

    layer_bits: tuple            # packed uint8 arrays, each (num_samples, ceil(n_l/8))
    layer_widths: tuple
    num_samples: int

    def unpacked(self) -> List[np.ndarray]:
        """Per-layer boolean arrays of shape (num_samples, n_l)."""
        out = []
        for bits, width in zip(self.layer_bits, self.layer_widths):
            out.append(np.unpackbits(bits, axis=1)[:, :width].astype(bool))
        return out

    def total_bits(self) -> int:
        return self.num_samples * int(sum(self.layer_widths))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivationPattern):
            return NotImplemented
        return (self.layer_widths == other.layer_widths
                and self.num_samples == other.num_samples
                and all(np.array_equal(a, b) for a, b in zip(self.layer_bits, other.layer_bits)))


def pattern_from_masks(masks: Sequence[np.ndarray]) -> ActivationPattern:
    """Pack per-layer boolean masks of shape (num_samples, n_l)."""
    packed = tuple(np.packbits(np.asarray(m, dtype=bool), axis=1) for m in masks)
    widths = tuple(int(m.shape[1]) for m in masks)
    return ActivationPattern(packed, widths, int(masks[0].shape[0]))


@dataclass(frozen=True)
class ProbeSet:
    """Fixed validation inputs on which masks are recorded all run long."""

    inputs: np.ndarray

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def probe_size(batch_size: int, fraction: float = PROBE_FRACTION) -> int:
    return max(1, int(np.floor(fraction * batch_size)))


def select_probe_set(val_inputs: np.ndarray, batch_size: int,
                     rng: np.random.Generator, fraction: float = PROBE_FRACTION) -> ProbeSet:
    k = min(probe_size(batch_size, fraction), val_inputs.shape[0])
    idx = np.sort(rng.choice(val_inputs.shape[0], size=k, replace=False))
    return ProbeSet(inputs=val_inputs[idx].copy())


def capture_pattern(model: List[LayerSpec], params: ParamStore, probe: ProbeSet) -> ActivationPattern:
    """Eval-mode activation pattern of every probe sample (z > 0 rule)."""
    if probe.size == 0:
        raise ValueError("empty probe set")
    trace = forward(model, params, probe.inputs, mode="eval")
    masks = [z.reshape(probe.size, -1) > 0 for z in trace.relu_inputs]
    return pattern_from_masks(masks)


def delta_w(prev: np.ndarray, curr: np.ndarray) -> float:
    """Mean absolute update over all p trainable scalars."""
    prev = np.asarray(prev, dtype=np.float64)
    curr = np.asarray(curr, dtype=np.float64)
    if prev.shape != curr.shape:
        raise ValueError(f"length mismatch: {prev.shape} vs {curr.shape}")
    if prev.size == 0:
        raise ValueError("empty parameter vectors")
    return float(np.abs(curr - prev).mean())


def delta_a(prev: ActivationPattern, curr: ActivationPattern) -> float:
    """Mean over ReLU layers of the per-layer flipped-bit fraction."""
    if prev.layer_widths != curr.layer_widths or prev.num_samples != curr.num_samples:
        raise ValueError("activation patterns have different structure")
    per_layer = []
    for a, b, width in zip(prev.layer_bits, curr.layer_bits, curr.layer_widths):
        flips = int(_POPCOUNT[np.bitwise_xor(a, b)].sum())
        per_layer.append(flips / (curr.num_samples * width))
    return float(np.mean(per_layer))


def sma_smooth(raw: Sequence[float], window: int) -> np.ndarray:
    """Trailing simple moving average with partial windows at the start."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("empty series")
    if window < 1:
        raise ValueError("window must be >= 1")
    if window == 1:
        return raw.copy()
    t = raw.size
    head_len = min(window - 1, t)
    head = np.array([raw[:i + 1].mean() for i in range(head_len)])
    if t >= window:
        body = np.lib.stride_tricks.sliding_window_view(raw, window).mean(axis=1)
        return np.concatenate([head, body])
    return head


def sma_window(batches_per_epoch: int, fraction: float = SMA_FRACTION) -> int:
    return max(1, int(np.floor(fraction * batches_per_epoch)))


def robust_normalize(series: Sequence[float]) -> np.ndarray:
    """Percentile min-max (0.5th / 99.5th, linear interpolation), clipped to [0, 1].

    A constant series (degenerate range) maps to all zeros.
    """
    s = np.asarray(series, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty series")
    q_lo, q_hi = np.percentile(s, [PERCENTILE_LO, PERCENTILE_HI])
    if q_hi == q_lo:
        return np.zeros_like(s)
    return np.clip((s - q_lo) / (q_hi - q_lo), 0.0, 1.0)


def auc(normalized: Sequence[float]) -> float:
    """Mean of a normalized curve (discretized area under the curve)."""
    s = np.asarray(normalized, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty series")
    if s.min() < 0.0 or s.max() > 1.0:
        raise ValueError("auc expects values in [0, 1]")
    return float(s.mean())


def speedup_ratio(auc_w: float, auc_p: float) -> float:
    """rho = AUC_W / AUC_P.

    auc_p == 0 is the degenerate no-activation-change case and returns
    +inf rather than raising; callers that serialize rho should check
    math.isfinite first.
    """
    if auc_p < 0:
        raise ValueError("auc_p must be >= 0")
    if auc_p == 0.0:
        return float("inf")
    return auc_w / auc_p


@dataclass(frozen=True)
class TrajectorySeries:
    """Raw, smoothed, and normalized views of one per-batch metric."""

    raw: np.ndarray
    smoothed: np.ndarray
    normalized: np.ndarray
    window: int

    @staticmethod
    def from_raw(raw: Sequence[float], window: int) -> "TrajectorySeries":
        raw = np.asarray(raw, dtype=np.float64)
        smoothed = sma_smooth(raw, window)
        return TrajectorySeries(raw, smoothed, robust_normalize(smoothed), window)

    @property
    def auc(self) -> float:
        return auc(self.normalized)


TRAJECTORY_COLUMNS = ("batch_index", "raw_dw", "raw_da", "smooth_dw", "smooth_da",
                      "norm_dw", "norm_da")


def write_trajectories_csv(path, dw: TrajectorySeries, da: TrajectorySeries) -> None:
    if len(dw.raw) != len(da.raw):
        raise ValueError("trajectory lengths differ")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for i in range(len(dw.raw)):
            writer.writerow([
                i,
                repr(float(dw.raw[i])), repr(float(da.raw[i])),
                repr(float(dw.smoothed[i])), repr(float(da.smoothed[i])),
                repr(float(dw.normalized[i])), repr(float(da.normalized[i])),
            ])


def read_trajectories_csv(path) -> dict:
    """Columns as lists of verbatim strings (values never reformatted)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRAJECTORY_COLUMNS:
            raise ValueError(f"unexpected trajectory CSV header: {header}")
        cols = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                cols[name].append(value)
    return cols
