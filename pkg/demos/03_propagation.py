"""Closed-form output change of a sign flip, against direct re-evaluation."""
# %%
import numpy as np

from ssipp import fixtures, nn
from ssipp.bits import BitAddress, Kind
from ssipp.propagation import (ConvLayerParams, LinearChainNet, conv_stack_delta, conv_stack_network,
                               conv_weight_sign_flip_delta, fc_sign_flip_delta, layer_sensitivity_profile)

rng = np.random.default_rng(7)

# %% a linear chain: negating w changes the output by -2 w a (times everything downstream)
chain = LinearChainNet([rng.standard_normal((3, 4)), rng.standard_normal((4, 2))])
x = rng.standard_normal(3)
addr = BitAddress(0, Kind.WEIGHT, 5, 31)
net = chain.to_network()
direct = nn.forward(net.flip(addr), x, np.float64) - nn.forward(net, x, np.float64)
print("closed form:", fc_sign_flip_delta(chain, addr, x))
print("re-evaluated:", direct)

# %% one conv layer: only the flipped kernel's output channel moves
k = rng.standard_normal((2, 1, 3, 3)).astype(np.float32)
img = rng.standard_normal((1, 5, 5))
delta = conv_weight_sign_flip_delta(k, img, (1, 0, 0, 2))
print("channel 0 untouched:", not delta[0].any(), " channel 1 change:\n", delta[1].round(3))

# %% three stacked convs: the change at one output pixel, summed explicitly
stack = [ConvLayerParams(rng.standard_normal((2, 1, 3, 3)).astype(np.float32), padding=1),
         ConvLayerParams(rng.standard_normal((2, 2, 3, 3)).astype(np.float32)),
         ConvLayerParams(rng.standard_normal((1, 2, 2, 2)).astype(np.float32))]
img = rng.standard_normal((1, 6, 6))
snet = conv_stack_network(stack, img.shape)
flip = BitAddress(1, Kind.WEIGHT, 7, 31)
ref = (nn.forward(snet.flip(flip), img, np.float64) - nn.forward(snet, img, np.float64)).reshape(snet.output_shape)
print("stack, pixel (0,1,2):", conv_stack_delta(stack, 1, np.unravel_index(7, (2, 2, 3, 3)), img, (0, 1, 2)),
      "vs", ref[0, 1, 2])

# %% on the trained CNN, how far do sign flips reach per layer?
for row in layer_sensitivity_profile(fixtures.model("tiny_cnn"), fixtures.dataset("patterns")):
    print(f"layer {row['layer']}: {row['flips']:3d} flips, reach {row['reach_fraction']:.2f}, "
          f"max |dP| {row['max_abs_dp']:.3f}, max |logit change| {row['max_abs_logit_delta']:.3g}")
