import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssipp import nn
from ssipp.bits import BitAddress, Kind
from ssipp.model_io import LabeledDataset
from ssipp.propagation import (ConvLayerParams, LinearChainNet, SelectorKernel, conv_bias_sign_flip_delta,
                               conv_stack_delta, conv_stack_network, conv_weight_sign_flip_delta,
                               fc_sign_flip_delta, layer_sensitivity_profile, write_profile_csv)

REL, ABS = 1e-5, 1e-7
seeds = st.integers(0, 2**32 - 1)


def differenced(network, addr, x):
    """O' - O with both forward passes in binary64."""
    x = np.asarray(x, dtype=np.float64)
    return nn.forward(network.flip(addr), x, np.float64) - nn.forward(network, x, np.float64)


def random_chain(rng):
    depth = int(rng.integers(1, 5))
    dims = rng.integers(1, 6, size=depth + 1)
    ws = [rng.standard_normal((dims[i], dims[i + 1])) for i in range(depth)]
    bs = [rng.standard_normal(dims[i + 1]) for i in range(depth)] if rng.random() < 0.5 else None
    return LinearChainNet(ws, bs)


def test_identity_chain():
    chain = LinearChainNet([np.eye(2), np.eye(2)])
    d = fc_sign_flip_delta(chain, BitAddress(0, Kind.WEIGHT, 3, 31), [1.0, 1.0])
    assert d.tolist() == [0.0, -2.0]
    d = fc_sign_flip_delta(chain, BitAddress(1, Kind.WEIGHT, 0, 31), [3.0, 1.0])
    assert d.tolist() == [-6.0, 0.0]


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_fc_closed_form_matches_differencing(seed):
    rng = np.random.default_rng(seed)
    chain = random_chain(rng)
    net = chain.to_network()
    x = rng.standard_normal(chain.dims[0])
    layer = int(rng.integers(len(chain.weights)))
    element = int(rng.integers(chain.weights[layer].size))
    addr = BitAddress(layer, Kind.WEIGHT, element, 31)
    np.testing.assert_allclose(fc_sign_flip_delta(chain, addr, x), differenced(net, addr, x), rtol=REL, atol=ABS)


def test_fc_zero_input_gives_zero_delta():
    chain = LinearChainNet([np.ones((3, 2)), np.ones((2, 2))])
    d = fc_sign_flip_delta(chain, BitAddress(0, Kind.WEIGHT, 1, 31), np.zeros(3))
    assert not d.any()


def test_fc_rejects_non_sign_and_bias():
    chain = LinearChainNet([np.ones((2, 2))])
    with pytest.raises(ValueError, match="sign"):
        fc_sign_flip_delta(chain, BitAddress(0, Kind.WEIGHT, 0, 30), [1, 1])
    with pytest.raises(ValueError):
        fc_sign_flip_delta(chain, BitAddress(0, Kind.BIAS, 0, 31), [1, 1])
    with pytest.raises(IndexError):
        fc_sign_flip_delta(chain, BitAddress(0, Kind.WEIGHT, 4, 31), [1, 1])
    with pytest.raises(ValueError):
        LinearChainNet([np.ones((2, 3)), np.ones((2, 2))])


def test_selector_kernel_is_single_tap_correlation():
    rng = np.random.default_rng(0)
    fmap = rng.standard_normal((5, 6))
    sel = SelectorKernel(3, 3, 1, 2)
    assert sel.mask.sum() == 1 and sel.mask[1, 2] == 1
    ref = nn.conv2d(fmap[None], sel.mask[None, None], np.zeros(1), stride=2, padding=1)[0]
    np.testing.assert_array_equal(sel.apply(fmap, stride=2, padding=1), ref)
    with pytest.raises(IndexError):
        SelectorKernel(3, 3, 3, 0)


def test_conv_center_tap():
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 0.75
    x = np.arange(25.0).reshape(1, 5, 5)
    d = conv_weight_sign_flip_delta(k, x, (0, 0, 1, 1))
    np.testing.assert_array_equal(d[0], -2 * 0.75 * x[0, 1:4, 1:4])


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_conv_weight_closed_form_matches_differencing(seed):
    rng = np.random.default_rng(seed)
    c_in, c_out, k = (int(v) for v in rng.integers(1, 4, size=3))
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    kern = rng.standard_normal((c_out, c_in, k, k)).astype(np.float32)
    bias = rng.standard_normal(c_out).astype(np.float32)
    x = rng.standard_normal((c_in, 6, 5))
    net = nn.Network([nn.Conv2D(c_in, c_out, k, k, stride, padding)], [kern], [bias], x.shape)
    element = int(rng.integers(kern.size))
    index = np.unravel_index(element, kern.shape)
    d = conv_weight_sign_flip_delta(kern, x, index, stride, padding)
    ref = differenced(net, BitAddress(0, Kind.WEIGHT, element, 31), x).reshape(d.shape)
    np.testing.assert_allclose(d, ref, rtol=REL, atol=ABS)
    # only the flipped kernel's output channel moves
    others = np.delete(ref, index[0], axis=0)
    assert not others.any()


def test_conv_bias_flip():
    d = conv_bias_sign_flip_delta([0.5, 1.5], 1, (2, 3))
    assert (d[1] == -3.0).all() and not d[0].any()
    # dyadic values: forward differencing is exact
    net = nn.Network([nn.Conv2D(1, 2, 1, 1)], [np.ones((2, 1, 1, 1))], [np.array([0.5, 1.5])], (1, 2, 3))
    x = np.full((1, 2, 3), 0.25)
    ref = differenced(net, BitAddress(0, Kind.BIAS, 1, 31), x).reshape(d.shape)
    np.testing.assert_array_equal(d, ref)


def ones_stack():
    one = np.ones((1, 1, 1, 1))
    return [ConvLayerParams(one), ConvLayerParams(one), ConvLayerParams(one)]


def test_conv_stack_unit_case():
    x = np.ones((1, 2, 2))
    assert conv_stack_delta(ones_stack(), 0, (0, 0, 0, 0), x, (0, 0, 0)) == -2.0
    assert conv_stack_delta(ones_stack(), 1, (0, 0, 0, 0), x, (0, 1, 1)) == -2.0


def random_stack(rng):
    chans = [int(v) for v in rng.integers(1, 3, size=4)]
    stack = []
    for i in range(3):
        k = int(rng.integers(1, 4))
        kern = rng.standard_normal((chans[i + 1], chans[i], k, k)).astype(np.float32)
        bias = rng.standard_normal(chans[i + 1]).astype(np.float32) if rng.random() < 0.5 else None
        stack.append(ConvLayerParams(kern, bias, stride=int(rng.integers(1, 3)), padding=int(rng.integers(0, 2))))
    return chans, stack


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_conv_stack_matches_differencing(seed):
    rng = np.random.default_rng(seed)
    chans, stack = random_stack(rng)
    x = rng.standard_normal((chans[0], 9, 9))
    try:
        net = conv_stack_network(stack, x.shape)
    except nn.ShapeError:
        return  # kernel outgrew the shrinking map
    layer = int(rng.integers(2))
    kern = stack[layer].kernels
    element = int(rng.integers(kern.size))
    index = tuple(int(v) for v in np.unravel_index(element, kern.shape))
    out = differenced(net, BitAddress(layer, Kind.WEIGHT, element, 31), x).reshape(net.output_shape)
    pos = tuple(int(rng.integers(n)) for n in out.shape)
    assert conv_stack_delta(stack, layer, index, x, pos) == pytest.approx(out[pos], rel=REL, abs=ABS)


def test_conv_stack_argument_checks():
    x = np.ones((1, 2, 2))
    with pytest.raises(ValueError):
        conv_stack_delta(ones_stack()[:2], 0, (0, 0, 0, 0), x, (0, 0, 0))
    with pytest.raises(ValueError):
        conv_stack_delta(ones_stack(), 2, (0, 0, 0, 0), x, (0, 0, 0))
    with pytest.raises(IndexError):
        conv_stack_delta(ones_stack(), 0, (0, 0, 0, 0), x, (0, 5, 0))


def test_conv_delta_scales_with_weight():
    rng = np.random.default_rng(4)
    k = rng.standard_normal((2, 1, 3, 3))
    x = rng.standard_normal((1, 5, 5))
    d1 = conv_weight_sign_flip_delta(k, x, (1, 0, 2, 0))
    d2 = conv_weight_sign_flip_delta(3 * k, x, (1, 0, 2, 0))
    np.testing.assert_allclose(d2, 3 * d1)


class TestProfile:
    def gated_net(self):
        # layer 0 pre-activations sit near -100, so ReLU swallows any weight sign flip there
        w0 = np.full((2, 2), 0.125)
        return nn.Network([nn.FullyConnected(2, 2), nn.ReLU(), nn.FullyConnected(2, 2)],
                          [w0, None, np.array([[1.0, 0.0], [0.0, 1.0]])],
                          [np.full(2, -100.0), None, np.array([0.0, 0.5])], (2,))

    def data(self):
        return LabeledDataset(np.array([[0.5, 1.0], [1.0, 0.0], [0.0, 0.0]]), [1, 1, 1], 2)

    def test_relu_gates_upstream_flips(self):
        rows = layer_sensitivity_profile(self.gated_net(), self.data(), kinds=(Kind.WEIGHT,))
        by_layer = {r["layer"]: r for r in rows}
        assert by_layer[0]["reach_fraction"] == 0.0
        assert by_layer[0]["max_abs_logit_delta"] == 0.0
        # layer 2 reads all-zero activations, so its weights are gated too
        assert by_layer[2]["reach_fraction"] == 0.0
        assert by_layer[0]["bit_class"] == "sign"
        assert by_layer[2]["flips"] == 4

    def test_bias_flips_reach_output(self):
        rows = layer_sensitivity_profile(self.gated_net(), self.data(), kinds=(Kind.BIAS,))
        last = {r["layer"]: r for r in rows}[2]
        # 0.0 -> -0.0 leaves the logit bits alone; 0.5 -> -0.5 swaps every prediction
        assert last["reach_fraction"] == 0.5
        assert last["max_abs_dp"] == 1.0
        assert last["max_abs_logit_delta"] == 1.0

    def test_profile_csv(self, tmp_path):
        rows = layer_sensitivity_profile(self.gated_net(), self.data(), bits=(31, 30))
        assert len(rows) == 4
        write_profile_csv(rows, tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0].startswith("layer,bit_class,flips")
        assert len(lines) == 5
