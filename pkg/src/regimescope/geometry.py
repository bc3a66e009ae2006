"""Local geometry probes: exact affine maps and pattern flip radii.

With the ReLU gates of an anchor input frozen, the network restricts to
an affine map K x + c on the anchor's linear region.  extract_affine
builds K and c by composing the layer maps with diagonal 0/1 masks; conv
and maxpool layers are first materialized as dense maps (maxpool with
the anchor's argmax selections frozen), and eval-mode batchnorm folds in
as a per-feature affine rescale.

The flip-radius probes estimate how far parameters (or the input) can
move along sampled unit directions before any ReLU bit of the anchor
flips: a coarse forward scan brackets the first flip, bisection refines
it.  The reported radius is the minimum over directions, a sampled
lower-envelope estimate of the true region inradius, not the exact
polytope inradius.  Anchors with a pre-activation within 1e-12 of zero
are degenerate (the measure-zero exclusion set) and report radius 0.
"""

import hashlib
import json
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import LayerShapeError
from .metrics import ActivationPattern, pattern_from_masks
from .nn.engine import ParamStore, forward, _params_of
from .nn.layers import LayerSpec, conv_output_hw

DEGENERATE_EPS = 1e-12

# layers that are affine in their input (eval mode)
_AFFINE_KINDS = ("dense", "conv2d", "batchnorm1d", "flatten", "dropout")


@dataclass(frozen=True)
class AffineMap:
    """K and c of the local affine restriction at one anchor input."""

    K: np.ndarray                      # (n_out, n_in_flat)
    c: np.ndarray                      # (n_out,)
    pattern: ActivationPattern         # anchor's ReLU masks (one sample)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.K @ np.asarray(x, dtype=np.float64).ravel() + self.c


@dataclass
class StabilityReport:
    """Result of one flip-radius probe around a single anchor."""

    anchor_input: np.ndarray
    anchor_params: np.ndarray
    directions_tested: int
    bisection_resolution: float
    eps_max: float
    flip_radius_param: Optional[float] = None
    flip_radius_input: Optional[float] = None
    degenerate: bool = False
    min_abs_preactivation: float = float("inf")
    censored_directions: int = 0
    pool_selection_changed: bool = False
    first_layer_bound: Optional[float] = None

    def to_json_dict(self, include_arrays: bool = False) -> dict:
        d = {
            "directions_tested": self.directions_tested,
            "bisection_resolution": self.bisection_resolution,
            "eps_max": self.eps_max,
            "flip_radius_param": self.flip_radius_param,
            "flip_radius_input": self.flip_radius_input,
            "degenerate": self.degenerate,
            "min_abs_preactivation": self.min_abs_preactivation,
            "censored_directions": self.censored_directions,
            "pool_selection_changed": self.pool_selection_changed,
            "first_layer_bound": self.first_layer_bound,
            "anchor_input_dim": int(self.anchor_input.size),
            "param_count": int(self.anchor_params.size),
            "anchor_params_sha256": hashlib.sha256(self.anchor_params.tobytes()).hexdigest(),
        }
        if include_arrays:
            d["anchor_input"] = self.anchor_input.ravel().tolist()
        return d


def conv_as_matrix(weight: np.ndarray, bias: np.ndarray, in_shape, kernel, stride,
                   padding) -> Tuple[np.ndarray, np.ndarray]:
    """Materialize a conv2d layer as (W, b) over row-major flat tensors.

    Entries are placed from the kernel weights by index arithmetic, so
    the matrix is exact (no summation happens while building it).
    """
    c, h, w = in_shape
    out_c = weight.shape[0]
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    oh, ow = conv_output_hw(h, w, kernel, stride, padding)
    oy, ox, ky, kx = np.meshgrid(np.arange(oh), np.arange(ow), np.arange(kh),
                                 np.arange(kw), indexing="ij")
    y = oy * sh + ky - ph
    x = ox * sw + kx - pw
    valid = (y >= 0) & (y < h) & (x >= 0) & (x < w)
    p = (oy * ow + ox)[valid]
    cols = (y[valid] * w + x[valid])
    kyv, kxv = ky[valid], kx[valid]
    m = np.zeros((out_c, oh * ow, c, h * w))
    for ci in range(c):
        m[:, p, ci, cols] = weight[:, ci, kyv, kxv]
    mat = m.reshape(out_c * oh * ow, c * h * w)
    return mat, np.repeat(bias, oh * ow)


def _pool_selection_indices(in_shape, kernel, stride, argmax: np.ndarray) -> np.ndarray:
    """Flat input index selected by each pooled output, from frozen argmax."""
    c, h, w = in_shape
    kh, kw = kernel
    sh, sw = stride
    _, oh, ow = argmax.shape  # (C, oh, ow) for a single sample
    oy = np.arange(oh)[None, :, None]
    ox = np.arange(ow)[None, None, :]
    cs = np.arange(c)[:, None, None]
    ys = oy * sh + argmax // kw
    xs = ox * sw + argmax % kw
    return (cs * (h * w) + ys * w + xs).ravel()


def extract_affine(model: List[LayerSpec], params: ParamStore, x: np.ndarray) -> AffineMap:
    """Exact (K, c) of the network on the anchor's activation region."""
    x = np.asarray(x, dtype=np.float64)
    trace = forward(model, params, x[None], mode="eval")
    masks = [z[0].ravel() > 0 for z in trace.relu_inputs]
    pattern = pattern_from_masks([m[None, :] for m in masks])

    n0 = x.size
    K = np.eye(n0)
    c = np.zeros(n0)
    shape = x.shape                     # unbatched shape flowing through the net
    relu_i = 0
    pool_i = 0
    for i, spec in enumerate(model):
        if spec.kind == "dense":
            p = _params_of(params, i)
            K = p["weight"] @ K
            c = p["weight"] @ c + p["bias"]
            shape = (spec.out_features,)
        elif spec.kind == "conv2d":
            p = _params_of(params, i)
            mat, b = conv_as_matrix(p["weight"], p["bias"], shape, spec.kernel,
                                    spec.stride, spec.padding)
            K = mat @ K
            c = mat @ c + b
            oh, ow = conv_output_hw(shape[1], shape[2], spec.kernel, spec.stride, spec.padding)
            shape = (spec.out_channels, oh, ow)
        elif spec.kind == "batchnorm1d":
            p = _params_of(params, i)
            state = params.bn_state[i]
            scale = p["bn_gamma"] / np.sqrt(state["var"] + spec.eps)
            K = scale[:, None] * K
            c = scale * c + (p["bn_beta"] - scale * state["mean"])
        elif spec.kind == "relu":
            d = masks[relu_i]
            relu_i += 1
            K = np.where(d[:, None], K, 0.0)
            c = np.where(d, c, 0.0)
        elif spec.kind == "maxpool2d":
            arg = trace.pool_argmax[pool_i][0]
            pool_i += 1
            sel = _pool_selection_indices(shape, spec.kernel, spec.stride, arg)
            K = K[sel]
            c = c[sel]
            oh, ow = arg.shape[1], arg.shape[2]
            shape = (shape[0], oh, ow)
        elif spec.kind == "dropout":
            pass                        # identity in eval mode
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
        else:
            raise LayerShapeError(i, f"layer kind {spec.kind!r} is not piecewise linear")
    return AffineMap(K=K, c=c, pattern=pattern)


def _pattern_key(model, params, x) -> Tuple[bytes, bytes]:
    """(relu bits, pool selections) of one input, as comparable bytes."""
    trace = forward(model, params, x[None], mode="eval")
    bits = b"".join(np.packbits(z[0].ravel() > 0).tobytes() for z in trace.relu_inputs)
    pools = b"".join(a[0].astype(np.int64).tobytes() for a in trace.pool_argmax)
    return bits, pools


def _min_abs_preactivation(model, params, x) -> float:
    trace = forward(model, params, x[None], mode="eval")
    return min(float(np.abs(z).min()) for z in trace.relu_inputs) if trace.relu_inputs \
        else float("inf")


def first_flip_along(pattern_at, ref_key, eps_max: float, resolution: float,
                     coarse_steps: int = 32) -> Tuple[float, bool, bool]:
    """Largest tested epsilon along one ray with the pattern preserved.

    `pattern_at(eps)` must return a (_pattern_key-style) tuple for the
    perturbed point.  A coarse forward scan brackets the first flip, then
    bisection tightens the bracket below `resolution`.  Returns
    (radius, flipped_within_eps_max, pool_selection_changed).
    """
    ref_bits, ref_pools = ref_key
    pool_changed = False
    lo = 0.0
    hi = None
    for eps in np.linspace(eps_max / coarse_steps, eps_max, coarse_steps):
        bits, pools = pattern_at(eps)
        if bits != ref_bits:
            hi = eps
            break
        if pools != ref_pools:
            pool_changed = True
        lo = eps
    if hi is None:
        return eps_max, False, pool_changed
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        bits, pools = pattern_at(mid)
        if bits == ref_bits:
            lo = mid
            if pools != ref_pools:
                pool_changed = True
        else:
            hi = mid
    return lo, True, pool_changed


def param_flip_radius(model: List[LayerSpec], params: ParamStore, x: np.ndarray,
                      directions: int, resolution: float, rng: np.random.Generator,
                      eps_max: Optional[float] = None) -> StabilityReport:
    """Pattern-preservation radius under parameter perturbations.

    Unit directions are sampled uniformly on the sphere in R^p; the
    report carries the minimum first-flip distance over them.
    """
    if directions < 1:
        raise ValueError("directions must be >= 1")
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    x = np.asarray(x, dtype=np.float64)
    w0 = params.to_flat()
    min_abs = _min_abs_preactivation(model, params, x)
    if eps_max is None:
        norm = float(np.linalg.norm(w0))
        eps_max = 0.1 * norm if norm > 0 else 1.0
    report = StabilityReport(anchor_input=x.copy(), anchor_params=w0.copy(),
                             directions_tested=directions, bisection_resolution=resolution,
                             eps_max=eps_max, min_abs_preactivation=min_abs)
    if min_abs < DEGENERATE_EPS:
        report.degenerate = True
        report.flip_radius_param = 0.0
        return report

    ref_key = _pattern_key(model, params, x)
    trial = params.copy()
    radii = []
    for _ in range(directions):
        u = rng.standard_normal(w0.size)
        u /= np.linalg.norm(u)

        def pattern_at(eps, u=u):
            trial.load_flat(w0 + eps * u)
            return _pattern_key(model, trial, x)

        r, flipped, pool_changed = first_flip_along(pattern_at, ref_key, eps_max, resolution)
        radii.append(r)
        if not flipped:
            report.censored_directions += 1
        report.pool_selection_changed |= pool_changed
    report.flip_radius_param = float(min(radii))
    return report


def _prefix_affine_rows(model: List[LayerSpec], params: ParamStore,
                        input_shape) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Affine map (R, r) feeding the first ReLU, or None if not affine in x."""
    n0 = int(np.prod(input_shape))
    R = np.eye(n0)
    r = np.zeros(n0)
    shape = tuple(input_shape)
    for i, spec in enumerate(model):
        if spec.kind == "relu":
            return R, r
        if spec.kind not in _AFFINE_KINDS:
            return None
        if spec.kind == "dense":
            p = _params_of(params, i)
            R = p["weight"] @ R
            r = p["weight"] @ r + p["bias"]
            shape = (spec.out_features,)
        elif spec.kind == "conv2d":
            p = _params_of(params, i)
            mat, b = conv_as_matrix(p["weight"], p["bias"], shape, spec.kernel,
                                    spec.stride, spec.padding)
            R = mat @ R
            r = mat @ r + b
            oh, ow = conv_output_hw(shape[1], shape[2], spec.kernel, spec.stride, spec.padding)
            shape = (spec.out_channels, oh, ow)
        elif spec.kind == "batchnorm1d":
            p = _params_of(params, i)
            state = params.bn_state[i]
            scale = p["bn_gamma"] / np.sqrt(state["var"] + spec.eps)
            R = scale[:, None] * R
            r = scale * r + (p["bn_beta"] - scale * state["mean"])
        elif spec.kind == "flatten":
            shape = (int(np.prod(shape)),)
    return None


def input_first_layer_bound(model: List[LayerSpec], params: ParamStore,
                            x: np.ndarray) -> Optional[float]:
    """Exact input-space distance to the nearest first-ReLU hyperplane."""
    x = np.asarray(x, dtype=np.float64)
    prefix = _prefix_affine_rows(model, params, x.shape)
    if prefix is None:
        return None
    R, r = prefix
    z1 = R @ x.ravel() + r
    row_norms = np.linalg.norm(R, axis=1)
    movable = row_norms > 0
    if not movable.any():
        return None
    return float(np.min(np.abs(z1[movable]) / row_norms[movable]))


def input_flip_radius(model: List[LayerSpec], params: ParamStore, x: np.ndarray,
                      directions: int, resolution: float, rng: np.random.Generator,
                      eps_max: Optional[float] = None) -> StabilityReport:
    """Pattern-preservation radius under input perturbations.

    When the layers ahead of the first ReLU are affine in x, the exact
    distance to the nearest first-layer hyperplane caps the reported
    radius (the true region inradius can never exceed it).
    """
    if directions < 1:
        raise ValueError("directions must be >= 1")
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    x = np.asarray(x, dtype=np.float64)
    w0 = params.to_flat()
    min_abs = _min_abs_preactivation(model, params, x)
    if eps_max is None:
        eps_max = float(np.linalg.norm(x)) + 1.0
    bound = input_first_layer_bound(model, params, x)
    report = StabilityReport(anchor_input=x.copy(), anchor_params=w0,
                             directions_tested=directions, bisection_resolution=resolution,
                             eps_max=eps_max, min_abs_preactivation=min_abs,
                             first_layer_bound=bound)
    if min_abs < DEGENERATE_EPS:
        report.degenerate = True
        report.flip_radius_input = 0.0
        return report

    ref_key = _pattern_key(model, params, x)
    radii = []
    for _ in range(directions):
        u = rng.standard_normal(x.size)
        u /= np.linalg.norm(u)

        def pattern_at(eps, u=u):
            return _pattern_key(model, params, x + eps * u.reshape(x.shape))

        r, flipped, pool_changed = first_flip_along(pattern_at, ref_key, eps_max, resolution)
        radii.append(r)
        if not flipped:
            report.censored_directions += 1
        report.pool_selection_changed |= pool_changed
    radius = float(min(radii))
    if bound is not None:
        radius = min(radius, bound)
    report.flip_radius_input = radius
    return report


def write_stability_reports_json(path, reports: List[StabilityReport]) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_json_dict() for r in reports], fh, indent=2)
        fh.write("\n")


def write_affine_csv(k_path, c_path, amap: AffineMap) -> None:
    np.savetxt(k_path, amap.K, delimiter=",")
    np.savetxt(c_path, amap.c[None, :], delimiter=",")
