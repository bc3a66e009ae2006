import numpy as np
import pytest

from regimescope.errors import LayerShapeError
from regimescope.nn import LayerSpec, build_model, forward, init_params
from regimescope.nn.engine import ParamEntry, ParamStore
from regimescope.prng import stream

from helpers import identity_mlp, random_mlp, fresh_params


def test_identity_mlp_positive_input():
    layers, params = identity_mlp(2)
    trace = forward(layers, params, np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(trace.output, [[1.0, 2.0]])
    assert len(trace.relu_inputs) == 1
    np.testing.assert_array_equal(trace.relu_inputs[0], [[1.0, 2.0]])


def test_identity_mlp_inactive_layer():
    layers, params = identity_mlp(2)
    trace = forward(layers, params, np.array([[-1.0, -2.0]]))
    np.testing.assert_array_equal(trace.output, [[0.0, 0.0]])
    np.testing.assert_array_equal(trace.relu_inputs[0], [[-1.0, -2.0]])


def test_lenet5_zero_image_zero_propagation():
    model = build_model("lenet5")
    params = init_params(list(model.layers), stream(3, "init"))
    # biases initialize to zero, so a zero image propagates zeros throughout
    trace = forward(list(model.layers), params, np.zeros((1, 1, 28, 28)))
    np.testing.assert_array_equal(trace.output, np.zeros((1, 10)))
    for z in trace.relu_inputs:
        np.testing.assert_array_equal(z, np.zeros_like(z))


def test_relu_zero_counts_inactive():
    layers, params = identity_mlp(2)
    trace = forward(layers, params, np.array([[0.0, 5.0]]))
    # z == 0 is inactive by the strict > 0 rule; output there stays 0
    assert trace.output[0, 0] == 0.0
    assert trace.output[0, 1] == 5.0


def test_shape_mismatch_names_layer():
    layers, params = identity_mlp(2)
    with pytest.raises(LayerShapeError) as err:
        forward(layers, params, np.zeros((1, 3)))
    assert err.value.layer_index == 0


def test_eval_forward_deterministic_with_dropout_and_bn():
    rng = np.random.default_rng(7)
    layers, in_dim, _ = random_mlp(rng, batchnorm=True, dropout=0.3)
    params = fresh_params(layers, seed=11)
    x = rng.standard_normal((5, in_dim))
    a = forward(layers, params, x, mode="eval")
    b = forward(layers, params, x, mode="eval")
    assert np.array_equal(a.output, b.output)


def test_train_dropout_requires_rng():
    layers = [LayerSpec.dense(3, 3), LayerSpec.dropout(0.5)]
    params = fresh_params(layers)
    with pytest.raises(ValueError, match="dropout requires an rng"):
        forward(layers, params, np.zeros((2, 3)), mode="train")


def test_bn_running_stats_update_only_in_train():
    layers = [LayerSpec.dense(4, 4), LayerSpec.batchnorm1d(4), LayerSpec.relu()]
    params = fresh_params(layers, seed=2)
    x = np.random.default_rng(0).standard_normal((16, 4))
    before = params.bn_state[1]["mean"].copy()
    forward(layers, params, x, mode="eval")
    np.testing.assert_array_equal(params.bn_state[1]["mean"], before)
    forward(layers, params, x, mode="train")
    assert not np.array_equal(params.bn_state[1]["mean"], before)


def test_maxpool_tie_breaks_to_lowest_linear_index():
    layers = [LayerSpec.maxpool2d(2)]
    params = ParamStore([], {})
    x = np.full((1, 1, 2, 2), 3.0)
    trace = forward(layers, params, x)
    assert trace.pool_argmax[0][0, 0, 0, 0] == 0
    assert trace.output[0, 0, 0, 0] == 3.0


def test_forward_determinism_same_seed():
    rng = np.random.default_rng(5)
    layers, in_dim, _ = random_mlp(rng, batchnorm=True, dropout=0.25)
    params_a = fresh_params(layers, seed=123)
    params_b = fresh_params(layers, seed=123)
    x = rng.standard_normal((6, in_dim))
    tr_a = forward(layers, params_a, x, mode="train", rng=stream(9, "dropout"))
    tr_b = forward(layers, params_b, x, mode="train", rng=stream(9, "dropout"))
    assert np.array_equal(tr_a.output, tr_b.output)
    for za, zb in zip(tr_a.relu_inputs, tr_b.relu_inputs):
        assert np.array_equal(za, zb)


def _segment_has_constant_pattern(layers, params, x0, x1, alphas):
    patterns = []
    for a in alphas:
        tr = forward(layers, params, (1 - a) * x0 + a * x1, mode="eval")
        bits = tuple(tuple((z > 0).ravel()) for z in tr.relu_inputs)
        pools = tuple(tuple(p.ravel()) for p in tr.pool_argmax)
        patterns.append((bits, pools))
    return all(p == patterns[0] for p in patterns)


def test_piecewise_linearity_on_shared_pattern_segment():
    rng = np.random.default_rng(42)
    alphas = np.linspace(0.0, 1.0, 11)
    checked = 0
    while checked < 10:
        layers, in_dim, _ = random_mlp(rng)
        params = fresh_params(layers, seed=int(rng.integers(1 << 30)))
        x0 = rng.standard_normal((1, in_dim))
        x1 = x0 + 1e-3 * rng.standard_normal((1, in_dim))
        if not _segment_has_constant_pattern(layers, params, x0, x1, alphas):
            continue
        f0 = forward(layers, params, x0).output
        f1 = forward(layers, params, x1).output
        for a in alphas:
            fm = forward(layers, params, (1 - a) * x0 + a * x1).output
            np.testing.assert_allclose(fm, (1 - a) * f0 + a * f1, atol=1e-9)
        checked += 1
