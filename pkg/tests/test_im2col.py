import numpy as np
import pytest

from regimescope.nn import LayerSpec, forward, im2col
from regimescope.nn.engine import ParamEntry, ParamStore

from helpers import conv2d_naive


def test_1x1_kernel_is_reshape_of_input():
    x = np.arange(12.0).reshape(1, 1, 3, 4)
    cols = im2col(x, kernel=1, stride=1, padding=0)
    np.testing.assert_array_equal(cols.ravel(), x.ravel())
    assert cols.shape == (12, 1)


def test_hand_enumerated_patch_table():
    # 3x3 input, 2x2 kernel, stride 1 -> 4 patches of 4 entries
    x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    cols = im2col(x, kernel=2, stride=1, padding=0)
    expected = np.array([
        [1.0, 2.0, 4.0, 5.0],
        [2.0, 3.0, 5.0, 6.0],
        [4.0, 5.0, 7.0, 8.0],
        [5.0, 6.0, 8.0, 9.0],
    ])
    np.testing.assert_array_equal(cols, expected)


def test_multichannel_row_ordering():
    # entries within a row are ordered (channel, kernel row, kernel col)
    x = np.stack([np.zeros((2, 2)), np.ones((2, 2))])[None]  # (1, 2, 2, 2)
    cols = im2col(x, kernel=2, stride=1, padding=0)
    np.testing.assert_array_equal(cols, [[0, 0, 0, 0, 1, 1, 1, 1]])


def test_kernel_larger_than_padded_input_raises():
    with pytest.raises(ValueError, match="larger than padded input"):
        im2col(np.zeros((1, 1, 3, 3)), kernel=5, stride=1, padding=0)
    # padding can make it legal again
    im2col(np.zeros((1, 1, 3, 3)), kernel=5, stride=1, padding=1)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_conv_via_im2col_matches_nested_loop_oracle(stride, padding):
    rng = np.random.default_rng(17)
    x = rng.standard_normal((2, 3, 8, 8))
    weight = rng.standard_normal((4, 3, 3, 3))
    bias = rng.standard_normal(4)
    layers = [LayerSpec.conv2d(3, 4, 3, stride=stride, padding=padding)]
    params = ParamStore([ParamEntry(0, "weight", weight), ParamEntry(0, "bias", bias)], {})
    got = forward(layers, params, x).output
    want = conv2d_naive(x, weight, bias, stride=stride, padding=padding)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)
