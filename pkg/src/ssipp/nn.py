"""Minimal deterministic feedforward inference in binary32.

Every reduction runs in a fixed, documented order so that two networks
differing in one stored bit produce outputs whose difference is caused by
that bit alone, never by float reassociation:

* conv2d: for each output element, products are accumulated over input
  channel, then kernel row, then kernel column (ascending), starting from
  zero; the bias is added last.
* fully_connected: products accumulated over the input index ascending,
  starting from zero; bias added last.
* pooling windows are scanned row-major.

Arrays are batched on a leading axis.  The batch axis and the output
channel axis are vectorised; that never changes the per-element order, so
results are bit-identical to a scalar loop nest.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .bits import BitAddress, Kind

INVALID = -1  # predict() result when any logit is NaN


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class Conv2D:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    type = "conv2d"

    def weight_shape(self):
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def bias_shape(self):
        return (self.out_channels,)

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_channels:
            raise ShapeError(f"conv2d expects ({self.in_channels}, H, W), got {tuple(shape)}")
        h, w = _conv_out(shape[1], self.kernel_h, self.stride, self.padding), _conv_out(
            shape[2], self.kernel_w, self.stride, self.padding
        )
        if h < 1 or w < 1:
            raise ShapeError(f"conv2d kernel {self.kernel_h}x{self.kernel_w} larger than padded input {tuple(shape)}")
        return (self.out_channels, h, w)

    def __call__(self, x, weight, bias):
        return conv2d(x, weight, bias, self.stride, self.padding)


@dataclass(frozen=True)
class FullyConnected:
    in_features: int
    out_features: int

    type = "fc"

    def weight_shape(self):
        return (self.in_features, self.out_features)

    def bias_shape(self):
        return (self.out_features,)

    def output_shape(self, shape):
        if tuple(shape) != (self.in_features,):
            raise ShapeError(f"fully connected expects ({self.in_features},), got {tuple(shape)}")
        return (self.out_features,)

    def __call__(self, x, weight, bias):
        return fully_connected(x, weight, bias)


@dataclass(frozen=True)
class AffineNorm:
    """Per-channel ``x * scale + shift``; folded batch normalisation.

    The scale vector is stored as the layer's weights and the shift as its
    biases.
    """

    channels: int

    type = "affine_norm"

    def weight_shape(self):
        return (self.channels,)

    def bias_shape(self):
        return (self.channels,)

    def output_shape(self, shape):
        if len(shape) not in (1, 3) or shape[0] != self.channels:
            raise ShapeError(f"affine norm expects {self.channels} channels, got {tuple(shape)}")
        return tuple(shape)

    def __call__(self, x, weight, bias):
        return affine_norm(x, weight, bias)


@dataclass(frozen=True)
class ReLU:
    type = "relu"

    def output_shape(self, shape):
        return tuple(shape)

    def __call__(self, x, weight=None, bias=None):
        return relu(x)


@dataclass(frozen=True)
class MaxPool:
    kernel: int
    stride: int | None = None

    type = "maxpool"

    def output_shape(self, shape):
        return _pool_shape(shape, self.kernel, self.stride or self.kernel, "maxpool")

    def __call__(self, x, weight=None, bias=None):
        return max_pool(x, self.kernel, self.stride or self.kernel)


@dataclass(frozen=True)
class AvgPool:
    kernel: int
    stride: int | None = None

    type = "avgpool"

    def output_shape(self, shape):
        return _pool_shape(shape, self.kernel, self.stride or self.kernel, "avgpool")

    def __call__(self, x, weight=None, bias=None):
        return avg_pool(x, self.kernel, self.stride or self.kernel)


@dataclass(frozen=True)
class Flatten:
    type = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def __call__(self, x, weight=None, bias=None):
        return x.reshape(x.shape[0], -1)


LAYER_TYPES = {cls.type: cls for cls in (Conv2D, FullyConnected, AffineNorm, ReLU, MaxPool, AvgPool, Flatten)}


def has_params(layer) -> bool:
    return hasattr(layer, "weight_shape")


def layer_to_dict(layer) -> dict:
    return {"type": layer.type, **asdict(layer)}


def layer_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type", None)
    if kind not in LAYER_TYPES:
        raise KeyError(f"unknown layer type {kind!r}")
    return LAYER_TYPES[kind](**d)


def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _pool_shape(shape, k, stride, name):
    if len(shape) != 3:
        raise ShapeError(f"{name} expects (C, H, W), got {tuple(shape)}")
    h, w = (shape[1] - k) // stride + 1, (shape[2] - k) // stride + 1
    if h < 1 or w < 1:
        raise ShapeError(f"{name} window {k} larger than input {tuple(shape)}")
    return (shape[0], h, w)


# ---------------------------------------------------------------------------
# operations


def conv2d(x, kernels, bias, stride=1, padding=0):
    """2D convolution (cross-correlation), ``O(q) = b(q) + sum_p K(q,p) * I(p)``.

    ``x`` is ``[C_in, H, W]`` or batched ``[N, C_in, H, W]``; ``kernels`` is
    ``[C_out, C_in, kh, kw]``.  Arithmetic runs in ``x``'s dtype.
    """
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be [C,H,W] or [N,C,H,W], got shape {x.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride {stride} / padding {padding}")
    dtype = x.dtype
    kernels = np.asarray(kernels, dtype=dtype)
    bias = np.asarray(bias, dtype=dtype)
    n, c_in, h, w = x.shape
    if kernels.ndim != 4 or kernels.shape[1] != c_in:
        raise ShapeError(f"kernels {kernels.shape} do not match {c_in} input channels")
    c_out, _, kh, kw = kernels.shape
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {c_out} output channels")
    ho, wo = _conv_out(h, kh, stride, padding), _conv_out(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

    acc = np.zeros((n, c_out, ho, wo), dtype=dtype)
    with np.errstate(all="ignore"):
        for p in range(c_in):
            for r in range(kh):
                for s in range(kw):
                    patch = x[:, p, r : r + stride * (ho - 1) + 1 : stride, s : s + stride * (wo - 1) + 1 : stride]
                    acc += kernels[:, p, r, s][None, :, None, None] * patch[:, None]
        acc += bias[None, :, None, None]
    return acc[0] if single else acc


def fully_connected(x, weights, bias):
    """``O_j = sum_i I_i * w_ij + b_j`` with ``weights`` shaped ``[N, M]``."""
    x = np.asarray(x)
    single = x.ndim == 1
    if single:
        x = x[None]
    dtype = x.dtype
    weights = np.asarray(weights, dtype=dtype)
    bias = np.asarray(bias, dtype=dtype)
    if weights.ndim != 2 or weights.shape[0] != x.shape[1]:
        raise ShapeError(f"input of {x.shape[1]} features does not match weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weights.shape[1]} outputs")
    acc = np.zeros((x.shape[0], weights.shape[1]), dtype=dtype)
    with np.errstate(all="ignore"):
        for i in range(weights.shape[0]):
            acc += x[:, i : i + 1] * weights[i][None, :]
        acc += bias[None, :]
    return acc[0] if single else acc


def relu(x):
    """Elementwise max(0, x); NaN passes through unchanged."""
    x = np.asarray(x)
    return np.where(x < 0, x.dtype.type(0), x)


def affine_norm(x, scale, shift):
    x = np.asarray(x)
    dtype = x.dtype
    scale = np.asarray(scale, dtype=dtype)
    shift = np.asarray(shift, dtype=dtype)
    shape = (1, -1) + (1,) * (x.ndim - 2)
    with np.errstate(all="ignore"):
        return x * scale.reshape(shape) + shift.reshape(shape)


def _windows(x, k, stride):
    n, c, h, w = x.shape
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    for r in range(k):
        for s in range(k):
            yield x[:, :, r : r + stride * (ho - 1) + 1 : stride, s : s + stride * (wo - 1) + 1 : stride]


def max_pool(x, k, stride=None):
    it = _windows(np.asarray(x), k, stride or k)
    out = next(it).copy()
    for win in it:
        out = np.maximum(out, win)
    return out


def avg_pool(x, k, stride=None):
    x = np.asarray(x)
    it = _windows(x, k, stride or k)
    out = next(it).copy()
    with np.errstate(all="ignore"):
        for win in it:
            out += win
        return out / x.dtype.type(k * k)


def predict(logits) -> int:
    """Argmax with lowest-index tie-break; ``INVALID`` if any logit is NaN."""
    logits = np.asarray(logits)
    if logits.size == 0:
        raise ValueError("cannot predict from empty logits")
    if np.isnan(logits).any():
        return INVALID
    return int(np.argmax(logits))


def predict_batch(logits) -> np.ndarray:
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] == 0:
        raise ValueError(f"expected [N, classes] logits, got shape {logits.shape}")
    pred = np.argmax(logits, axis=1)
    return np.where(np.isnan(logits).any(axis=1), INVALID, pred)


# ---------------------------------------------------------------------------
# network


class Network:
    """Ordered layers plus their binary32 parameter store.

    Parameter arrays are read-only; perturbation goes through
    :meth:`replace_word`, which returns a new network sharing every other
    array with this one.  The canonical flat parameter order is: layers in
    network order, weights before biases within a layer, row-major inside
    each array.
    """

    def __init__(self, layers: Sequence, weights=None, biases=None, input_shape=None):
        self.layers = tuple(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        n = len(self.layers)
        weights = list(weights) if weights is not None else [None] * n
        biases = list(biases) if biases is not None else [None] * n
        if len(weights) != n or len(biases) != n:
            raise ValueError("one weight/bias entry per layer required (None for parameterless layers)")
        self.weights = tuple(_freeze(w, l.weight_shape() if has_params(l) else None, i, "weights", l)
                             for i, (w, l) in enumerate(zip(weights, self.layers)))
        self.biases = tuple(_freeze(b, l.bias_shape() if has_params(l) else None, i, "biases", l)
                            for i, (b, l) in enumerate(zip(biases, self.layers)))
        self.shapes = self._infer_shapes()

    def _infer_shapes(self):
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.type}): {exc}") from None
        return tuple(shapes)

    @property
    def output_shape(self):
        return self.shapes[-1]

    def param(self, layer: int, kind: Kind) -> np.ndarray:
        arr = (self.weights if Kind(kind) == Kind.WEIGHT else self.biases)[layer]
        if arr is None:
            raise IndexError(f"layer {layer} ({self.layers[layer].type}) has no parameters")
        return arr

    def param_layers(self):
        return [i for i, l in enumerate(self.layers) if has_params(l)]

    def param_count(self, layer: int | None = None) -> int:
        if layer is None:
            return sum(self.param_count(i) for i in range(len(self.layers)))
        if not has_params(self.layers[layer]):
            return 0
        return self.weights[layer].size + self.biases[layer].size

    @property
    def bit_count(self) -> int:
        return 32 * self.param_count()

    def arrays(self):
        """(layer, kind, array) in canonical flat order."""
        for i in self.param_layers():
            yield i, Kind.WEIGHT, self.weights[i]
            yield i, Kind.BIAS, self.biases[i]

    def flat_words(self) -> np.ndarray:
        parts = [a.reshape(-1).view(np.uint32) for _, _, a in self.arrays()]
        return np.concatenate(parts) if parts else np.zeros(0, np.uint32)

    def word_offset(self, layer: int, kind: Kind) -> int:
        """Index of the array's first word in the canonical flat order."""
        off = 0
        for i, k, a in self.arrays():
            if (i, k) == (layer, Kind(kind)):
                return off
            off += a.size
        raise IndexError(f"layer {layer} has no {Kind(kind)} parameters")

    def address_of(self, flat_word: int, bit: int) -> BitAddress:
        off = 0
        for i, k, a in self.arrays():
            if flat_word < off + a.size:
                return BitAddress(i, k, flat_word - off, bit)
            off += a.size
        raise IndexError(f"flat word {flat_word} beyond {off} parameters")

    def check_address(self, addr: BitAddress) -> None:
        if addr.layer >= len(self.layers):
            raise IndexError(f"layer {addr.layer} out of range ({len(self.layers)} layers)")
        arr = self.param(addr.layer, addr.kind)
        if addr.element >= arr.size:
            raise IndexError(f"element {addr.element} out of range for layer {addr.layer} {addr.kind} ({arr.size})")

    def get_word(self, layer: int, kind: Kind, element: int) -> int:
        return int(self.param(layer, kind).reshape(-1).view(np.uint32)[element])

    def replace_word(self, layer: int, kind: Kind, element: int, bits: int) -> "Network":
        arr = self.param(layer, kind).copy()
        arr.reshape(-1).view(np.uint32)[element] = np.uint32(bits & 0xFFFFFFFF)
        weights, biases = list(self.weights), list(self.biases)
        (weights if Kind(kind) == Kind.WEIGHT else biases)[layer] = arr
        return Network(self.layers, weights, biases, self.input_shape)

    def flip(self, addr: BitAddress) -> "Network":
        self.check_address(addr)
        word = self.get_word(addr.layer, addr.kind, addr.element)
        return self.replace_word(addr.layer, addr.kind, addr.element, word ^ (1 << addr.bit))

    def digest(self) -> str:
        """SHA-256 over the architecture and every parameter bit."""
        h = hashlib.sha256()
        h.update(json.dumps({"input_shape": self.input_shape,
                             "layers": [layer_to_dict(l) for l in self.layers]}, sort_keys=True).encode())
        h.update(self.flat_words().astype("<u4").tobytes())
        return h.hexdigest()

    def __repr__(self):
        body = ", ".join(l.type for l in self.layers)
        return f"Network(input={self.input_shape}, layers=[{body}], params={self.param_count()})"


def _freeze(arr, shape, index, what, layer):
    if shape is None:
        if arr is not None:
            raise ValueError(f"layer {index} ({layer.type}) takes no {what}")
        return None
    if arr is None:
        raise ValueError(f"layer {index} ({layer.type}) needs {what} of shape {shape}")
    a = np.array(arr, dtype=np.float32)  # copy, so callers cannot mutate it later
    if a.shape != tuple(shape):
        if a.size != int(np.prod(shape)):
            raise ShapeError(f"layer {index} ({layer.type}) {what}: expected shape {shape}, got {a.shape}")
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


def run_layers(network: Network, x, start: int = 0, stop: int | None = None, dtype=np.float32):
    """Apply layers ``start:stop`` to a batch ``x`` already shaped for layer ``start``."""
    out = np.asarray(x, dtype=dtype)
    stop = len(network.layers) if stop is None else stop
    for i in range(start, stop):
        layer = network.layers[i]
        try:
            out = layer(out, network.weights[i], network.biases[i])
        except ShapeError as exc:
            raise ShapeError(f"layer {i} ({layer.type}): {exc}") from None
    return out


def forward_batch(network: Network, xs, dtype=np.float32) -> np.ndarray:
    xs = np.asarray(xs, dtype=dtype)
    if tuple(xs.shape[1:]) != network.input_shape:
        raise ShapeError(f"input batch shape {xs.shape[1:]} != network input shape {network.input_shape}")
    return run_layers(network, xs, 0, None, dtype).reshape(xs.shape[0], -1)


def forward(network: Network, x, dtype=np.float32) -> np.ndarray:
    """Logits for one input tensor.

    ``dtype`` selects the arithmetic precision; binary32 is the default and
    the only one used for fault injection.
    """
    x = np.asarray(x, dtype=dtype)
    if tuple(x.shape) != network.input_shape:
        raise ShapeError(f"input shape {x.shape} != network input shape {network.input_shape}")
    return forward_batch(network, x[None], dtype)[0]
