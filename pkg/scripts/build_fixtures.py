"""Regenerate the fixture models, datasets and policies in src/ssipp/data.

Training is not part of the package; this script fits the tiny CNN once,
offline, with scipy's L-BFGS on a synthetic bar-pattern task, and writes
the resulting binary32 weights.  Re-running it overwrites the fixtures.

    python scripts/build_fixtures.py
"""
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from ssipp import nn
from ssipp.engine import evaluate
from ssipp.model_io import LabeledDataset, save_dataset, save_model

DATA = Path(__file__).resolve().parents[1] / "src" / "ssipp" / "data"
SIDE = 6


def bar_patterns(n, rng, noise=0.35):
    """Class 0: horizontal bar, 1: vertical bar, 2: diagonal; random offset + noise."""
    xs = np.zeros((n, 1, SIDE, SIDE))
    labels = np.arange(n) % 3
    for k, c in enumerate(labels):
        img = np.zeros((SIDE, SIDE))
        pos = rng.integers(1, SIDE - 1)
        if c == 0:
            img[pos, 1:-1] = 1.0
        elif c == 1:
            img[1:-1, pos] = 1.0
        else:
            shift = rng.integers(-1, 2)
            for i in range(SIDE):
                if 0 <= i + shift < SIDE:
                    img[i, i + shift] = 1.0
        xs[k, 0] = img + noise * rng.standard_normal((SIDE, SIDE))
    return xs.astype(np.float32), labels.astype(np.uint8)


CNN_LAYERS = [
    nn.Conv2D(1, 2, 3, 3),
    nn.AffineNorm(2),
    nn.ReLU(),
    nn.MaxPool(2),
    nn.Flatten(),
    nn.FullyConnected(8, 3),
]


def unpack(theta):
    net_w, net_b, i = [], [], 0
    for layer in CNN_LAYERS:
        if not nn.has_params(layer):
            net_w.append(None)
            net_b.append(None)
            continue
        ws, bs = layer.weight_shape(), layer.bias_shape()
        nw, nb = int(np.prod(ws)), int(np.prod(bs))
        net_w.append(theta[i : i + nw].reshape(ws))
        net_b.append(theta[i + nw : i + nw + nb].reshape(bs))
        i += nw + nb
    return net_w, net_b


def logits64(theta, xs):
    ws, bs = unpack(theta)
    out = xs.astype(np.float64)
    for layer, w, b in zip(CNN_LAYERS, ws, bs):
        out = layer(out, w, b)
    return out


def loss(theta, xs, ys):
    z = logits64(theta, xs)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(ys)), ys].mean() + 1e-3 * float(theta @ theta)


def main():
    rng = np.random.default_rng(20190301)
    train_x, train_y = bar_patterns(300, rng)
    val_x, val_y = bar_patterns(60, rng)

    n_params = sum(int(np.prod(l.weight_shape())) + int(np.prod(l.bias_shape()))
                   for l in CNN_LAYERS if nn.has_params(l))
    theta0 = 0.5 * rng.standard_normal(n_params)
    # AffineNorm starts as identity
    theta0[20:22], theta0[22:24] = 1.0, 0.0
    fit = minimize(loss, theta0, args=(train_x, train_y.astype(int)), method="L-BFGS-B",
                   options={"maxiter": 400})
    ws, bs = unpack(fit.x)
    net = nn.Network(CNN_LAYERS, ws, bs, (1, SIDE, SIDE))
    val = LabeledDataset(val_x, val_y, 3)
    train = LabeledDataset(train_x, train_y, 3)
    acc_val, acc_train = evaluate(net, val), evaluate(net, train)
    print(f"tiny_cnn: loss {fit.fun:.4f}, train acc {acc_train:.4f}, val acc {acc_val:.4f}")

    DATA.mkdir(parents=True, exist_ok=True)
    save_model(net, DATA / "tiny_cnn.manifest", DATA / "tiny_cnn.bin", comment=(
        f"Trained offline by scripts/build_fixtures.py (L-BFGS-B, binary64, seed 20190301, "
        f"300 synthetic bar patterns). Accuracy: patterns.ds {acc_val:.4f}, patterns_train.ds {acc_train:.4f}. "
        f"{net.param_count()} parameters = {net.bit_count} bits."))
    save_dataset(val, DATA / "patterns.ds")
    save_dataset(train, DATA / "patterns_train.ds")

    # tiny_fc: hand-set dyadic weights, two outputs; class 0 iff x0 + x1 > x2
    fc = nn.Network([nn.FullyConnected(3, 2), nn.ReLU()],
                    [np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), None],
                    [np.array([0.0, 0.25]), None], (3,))
    tiny_x = np.array([[1, 1, 0], [0, 0, 1], [2, 0, 1], [0, 0.5, 2]], dtype=np.float32)
    tiny_y = np.array([0, 1, 0, 1], dtype=np.uint8)
    tiny = LabeledDataset(tiny_x, tiny_y, 2)
    save_model(fc, DATA / "tiny_fc.manifest", DATA / "tiny_fc.bin", comment=(
        f"Hand-set weights (no training). Accuracy on tiny4.ds: {evaluate(fc, tiny):.4f}."))
    save_dataset(tiny, DATA / "tiny4.ds")
    save_dataset(LabeledDataset(tiny_x, np.arange(4, dtype=np.uint8), 4), DATA / "balanced4.ds")

    policies = {
        "none": "name none\nscheme ecc\ngroup_width 8\n",
        "exponent": "name exponent\nscheme ecc\ngroup_width 8\nprotect layers=all kinds=both bits=exponent\n",
        "exponent_sign": ("name exponent+sign\nscheme ecc\ngroup_width 8\n"
                          "protect layers=all kinds=both bits=exponent\n"
                          "protect layers=all kinds=both bits=sign\n"),
        "all": "name all\nscheme ecc\ngroup_width 8\nprotect layers=all kinds=both bits=all\n",
        "tmr_first_layer": ("name tmr-first-layer\nscheme tmr\n"
                            "protect layers=0 kinds=both bits=all  # first conv layer only\n"),
    }
    (DATA / "policies").mkdir(exist_ok=True)
    for name, text in policies.items():
        (DATA / "policies" / f"{name}.policy").write_text(text)


if __name__ == "__main__":
    main()
