"""Closed-form output deltas of sign flips in linear layers.

Negating one weight ``w`` changes its own contribution by ``-2 w a`` where
``a`` is the activation it multiplies.  Without activations between layers
that change travels unchanged through the downstream linear maps, so the
output delta is ``-2 w a`` times the downstream weight products.  All
deltas here are ``perturbed - original`` and are computed in binary64
from the stored binary32 values; none of them runs the network forward.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bits import SIGN_BIT, BitAddress, Kind, classify_bit
from .engine import FaultEvaluator, ScanScope, top1_accuracy
from .nn import Conv2D, FullyConnected, Network, run_layers


@dataclass
class LinearChainNet:
    """Fully connected layers with no activations; ``weights[l]`` is ``[N_l, M_l]``."""

    weights: list
    biases: list | None = None

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float32) for w in self.weights]
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError(f"chain dimensions do not compose: {a.shape} then {b.shape}")
        if self.biases is not None:
            self.biases = [np.asarray(b, dtype=np.float32) for b in self.biases]

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def bias(self, l):
        if self.biases is None:
            return np.zeros(self.weights[l].shape[1], np.float32)
        return self.biases[l]

    def to_network(self) -> Network:
        layers = [FullyConnected(*w.shape) for w in self.weights]
        return Network(layers, self.weights, [self.bias(l) for l in range(len(self.weights))], (self.dims[0],))


def _check_sign_flip(addr: BitAddress):
    if addr.bit != SIGN_BIT:
        raise ValueError(f"closed forms cover sign flips only; bit {addr.bit} is {classify_bit(addr.bit)}")


def fc_sign_flip_delta(chain: LinearChainNet, addr: BitAddress, x) -> np.ndarray:
    """Output delta of negating weight ``addr`` (chain layer, flat ``i * M + j``)."""
    _check_sign_flip(addr)
    if addr.kind != Kind.WEIGHT:
        raise ValueError("fc_sign_flip_delta addresses weights; bias flips shift the output directly")
    if addr.layer >= len(chain.weights):
        raise IndexError(f"chain has {len(chain.weights)} layers, got layer {addr.layer}")
    W = [w.astype(np.float64) for w in chain.weights]
    n_in, n_out = W[addr.layer].shape
    if addr.element >= n_in * n_out:
        raise IndexError(f"element {addr.element} outside {n_in}x{n_out} weights")
    i, j = divmod(addr.element, n_out)

    a = np.asarray(x, dtype=np.float64)
    for l in range(addr.layer):
        a = a @ W[l] + chain.bias(l).astype(np.float64)

    downstream = np.zeros(n_out)
    downstream[j] = 1.0
    for l in range(addr.layer + 1, len(W)):
        downstream = downstream @ W[l]
    return -2.0 * W[addr.layer][i, j] * a[i] * downstream


@dataclass(frozen=True)
class SelectorKernel:
    """Kernel-shaped mask with a single 1 at ``(row, col)``.

    Correlating a feature map with it just picks the input pixel that the
    selected kernel tap reads for every output position.
    """

    kernel_h: int
    kernel_w: int
    row: int
    col: int

    def __post_init__(self):
        if not (0 <= self.row < self.kernel_h and 0 <= self.col < self.kernel_w):
            raise IndexError(f"tap ({self.row}, {self.col}) outside {self.kernel_h}x{self.kernel_w} kernel")

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros((self.kernel_h, self.kernel_w))
        m[self.row, self.col] = 1.0
        return m

    def apply(self, fmap, stride=1, padding=0) -> np.ndarray:
        fmap = np.asarray(fmap, dtype=np.float64)
        h, w = fmap.shape
        ho = (h + 2 * padding - self.kernel_h) // stride + 1
        wo = (w + 2 * padding - self.kernel_w) // stride + 1
        padded = np.pad(fmap, padding) if padding else fmap
        return padded[self.row : self.row + stride * (ho - 1) + 1 : stride,
                      self.col : self.col + stride * (wo - 1) + 1 : stride]


def conv_weight_sign_flip_delta(kernels, x, index, stride=1, padding=0) -> np.ndarray:
    """Output delta of negating ``kernels[q, p, r, s]``.

    Only output channel ``q`` changes: ``-2 * w * (x[p] correlated with S_rs)``.
    """
    kernels = np.asarray(kernels)
    x = np.asarray(x)
    q, p, r, s = index
    c_out, c_in, kh, kw = kernels.shape
    if not (0 <= q < c_out and 0 <= p < c_in):
        raise IndexError(f"channel pair ({q}, {p}) outside kernels {kernels.shape}")
    if x.ndim != 3 or x.shape[0] != c_in:
        raise ValueError(f"input {x.shape} does not match {c_in} input channels")
    shifted = SelectorKernel(kh, kw, r, s).apply(x[p], stride, padding)
    delta = np.zeros((c_out,) + shifted.shape)
    delta[q] = -2.0 * float(kernels[q, p, r, s]) * shifted
    return delta


def conv_bias_sign_flip_delta(bias, q: int, out_hw) -> np.ndarray:
    """Negating ``bias[q]`` shifts all of channel ``q`` by ``-2 * bias[q]``."""
    bias = np.asarray(bias)
    if not 0 <= q < bias.size:
        raise IndexError(f"bias index {q} outside {bias.size} channels")
    delta = np.zeros((bias.size,) + tuple(out_hw))
    delta[q] = -2.0 * float(bias[q])
    return delta


@dataclass(frozen=True)
class ConvLayerParams:
    kernels: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0

    def spec(self):
        c_out, c_in, kh, kw = np.shape(self.kernels)
        return Conv2D(c_in, c_out, kh, kw, self.stride, self.padding)

    def bias_or_zero(self):
        if self.bias is None:
            return np.zeros(np.shape(self.kernels)[0], np.float32)
        return np.asarray(self.bias)


def conv_stack_network(stack: Sequence[ConvLayerParams], input_shape) -> Network:
    return Network([c.spec() for c in stack], [c.kernels for c in stack],
                   [c.bias_or_zero() for c in stack], input_shape)


def _read(fmap, c, y, x):
    h, w = fmap.shape[1:]
    if 0 <= y < h and 0 <= x < w:
        return fmap[c, y, x]
    return 0.0  # zero padding


def conv_stack_delta(stack: Sequence[ConvLayerParams], layer: int, index, x, position) -> float:
    """Delta at ``position = (channel, row, col)`` of the third conv output.

    ``layer`` (0 or 1) is the stack position of the negated weight and
    ``index`` its ``(q, p, r, s)`` kernel index.  The result is the explicit
    five-fold sum over intermediate channel and the two kernels' taps; out of
    range reads are zero padding.
    """
    if len(stack) != 3:
        raise ValueError("conv_stack_delta needs exactly three conv layers")
    if layer not in (0, 1):
        raise ValueError(f"flipped layer must be 0 or 1, got {layer}")
    K = [np.asarray(c.kernels, dtype=np.float64) for c in stack]
    x = np.asarray(x, dtype=np.float64)
    h0, w0 = x.shape[1:]
    sizes = [(h0, w0)]
    for c in stack:
        _, _, kh, kw = np.shape(c.kernels)
        h, w = sizes[-1]
        sizes.append(((h + 2 * c.padding - kh) // c.stride + 1, (w + 2 * c.padding - kw) // c.stride + 1))
    c3, y3, x3 = position
    if not (0 <= c3 < K[2].shape[0] and 0 <= y3 < sizes[3][0] and 0 <= x3 < sizes[3][1]):
        raise IndexError(f"output position {position} outside {(K[2].shape[0],) + sizes[3]}")
    q, p, r, s = index
    if not all(0 <= v < n for v, n in zip(index, K[layer].shape)):
        raise IndexError(f"weight index {index} outside kernels {K[layer].shape}")
    w = K[layer][q, p, r, s]
    L1, L2, L3 = stack
    (h1, w1), (h2, w2) = sizes[1], sizes[2]

    total = 0.0
    _, c2_in, kh3, kw3 = K[2].shape
    for r3 in range(kh3):
        for s3 in range(kw3):
            y2 = y3 * L3.stride + r3 - L3.padding
            x2 = x3 * L3.stride + s3 - L3.padding
            if not (0 <= y2 < h2 and 0 <= x2 < w2):
                continue
            if layer == 1:
                # flipped weight K2[q, p, r, s] reads layer-1 output channel p
                y1 = y2 * L2.stride + r - L2.padding
                x1 = x2 * L2.stride + s - L2.padding
                if not (0 <= y1 < h1 and 0 <= x1 < w1):
                    continue
                o1 = float(L1.bias_or_zero()[p])
                _, c0, kh1, kw1 = K[0].shape
                for p0 in range(c0):
                    for i in range(kh1):
                        for j in range(kw1):
                            y0 = y1 * L1.stride + i - L1.padding
                            x0 = x1 * L1.stride + j - L1.padding
                            o1 += K[0][p, p0, i, j] * _read(x, p0, y0, x0)
                total += K[2][c3, q, r3, s3] * o1
            else:
                # flipped weight K1[q, p, r, s] perturbs layer-1 channel q
                _, _, kh2, kw2 = K[1].shape
                for q2 in range(c2_in):
                    for i in range(kh2):
                        for j in range(kw2):
                            y1 = y2 * L2.stride + i - L2.padding
                            x1 = x2 * L2.stride + j - L2.padding
                            if not (0 <= y1 < h1 and 0 <= x1 < w1):
                                continue
                            y0 = y1 * L1.stride + r - L1.padding
                            x0 = x1 * L1.stride + s - L1.padding
                            total += K[2][c3, q2, r3, s3] * K[1][q2, q, i, j] * _read(x, p, y0, x0)
    return -2.0 * w * total


# ---------------------------------------------------------------------------
# empirical per-layer sensitivity


PROFILE_COLUMNS = ("layer", "bit_class", "flips", "mean_abs_dp", "max_abs_dp", "reach_fraction",
                   "mean_abs_logit_delta", "max_abs_logit_delta")


def layer_sensitivity_profile(network: Network, dataset, bits=(SIGN_BIT,), kinds=(Kind.WEIGHT, Kind.BIAS),
                              metric=top1_accuracy) -> list[dict]:
    """Per-layer summary of single-bit flips (sign bits by default).

    ``reach_fraction`` is the share of flips that change any logit bit for
    any sample; logit deltas are max-abs over samples and classes, with
    non-finite deltas reported as ``inf``.
    """
    ev = FaultEvaluator(network, dataset, metric)
    base = run_layers(network, dataset.samples).reshape(len(dataset), -1)
    base64 = base.astype(np.float64)
    rows = []
    for layer in network.param_layers():
        for bit in sorted(bits):
            addrs = ScanScope(layers={layer}, kinds=kinds, bits={bit}).addresses(network)
            dps, deltas, reached = [], [], 0
            for a in addrs:
                logits = ev.perturbed_logits(a)
                dps.append(abs(ev.p_original - float(metric(logits, dataset.labels))))
                changed = (logits.view(np.uint32) != base.view(np.uint32)).any()
                reached += bool(changed)
                with np.errstate(all="ignore"):
                    d = np.abs(logits.astype(np.float64) - base64)
                deltas.append(np.inf if not np.isfinite(d).all() else float(d.max()))
            finite = [d for d in deltas if np.isfinite(d)]
            rows.append({
                "layer": layer,
                "bit_class": str(classify_bit(bit)),
                "flips": len(addrs),
                "mean_abs_dp": float(np.mean(dps)),
                "max_abs_dp": float(np.max(dps)),
                "reach_fraction": reached / len(addrs),
                "mean_abs_logit_delta": float(np.mean(finite)) if len(finite) == len(deltas) else float("inf"),
                "max_abs_logit_delta": float(np.max(deltas)),
            })
    return rows


def write_profile_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, PROFILE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
