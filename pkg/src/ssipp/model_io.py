"""Bit-exact model and dataset files.

Model = JSON manifest + raw parameter blob.  The blob is the canonical flat
parameter order (see :class:`ssipp.nn.Network`) written as little-endian
binary32 words, so the bits on disk are exactly the bits that get flipped.

Dataset file layout (all integers little-endian)::

    magic     4 bytes   b"SSDS"
    version   uint16    1
    ndim      uint16
    dims      uint32 * ndim       per-sample tensor shape
    count     uint32              number of samples
    classes   uint32
    samples   float32 * count * prod(dims)
    labels    uint8 * count
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import Network, has_params, layer_from_dict, layer_to_dict

MANIFEST_FORMAT = "ssipp-model"
MANIFEST_VERSION = 1
DATASET_MAGIC = b"SSDS"
DATASET_VERSION = 1


class ModelFormatError(ValueError):
    pass


class ChecksumError(ModelFormatError):
    pass


class CountMismatchError(ModelFormatError):
    pass


class UnknownLayerError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class DatasetFormatError(ValueError):
    pass


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_model(network: Network, manifest_path, blob_path, comment: str | None = None) -> None:
    manifest_path, blob_path = Path(manifest_path), Path(blob_path)
    blob = network.flat_words().astype("<u4").tobytes()
    layers, offset = [], 0
    for i, layer in enumerate(network.layers):
        entry = layer_to_dict(layer)
        if has_params(layer):
            nw, nb = network.weights[i].size, network.biases[i].size
            entry["weights"] = {"offset": offset, "count": nw}
            entry["biases"] = {"offset": offset + nw, "count": nb}
            offset += nw + nb
        layers.append(entry)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "input_shape": list(network.input_shape),
        "layers": layers,
        "blob": {"file": blob_path.name, "words": offset, "sha256": _sha256(blob)},
    }
    if comment:
        manifest["comment"] = comment
    blob_path.write_bytes(blob)
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")


def read_manifest(manifest_path) -> dict:
    manifest = json.loads(Path(manifest_path).read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ModelFormatError(f"{manifest_path}: not a {MANIFEST_FORMAT} manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise UnsupportedVersionError(f"{manifest_path}: manifest version {manifest.get('version')} not supported")
    return manifest


def load_model(manifest_path, blob_path=None) -> Network:
    """Load a network; ``blob_path`` defaults to the file named in the manifest."""
    manifest = read_manifest(manifest_path)
    if blob_path is None:
        blob_path = Path(manifest_path).parent / manifest["blob"]["file"]
    blob = Path(blob_path).read_bytes()

    declared = int(manifest["blob"]["words"])
    if len(blob) != 4 * declared:
        raise CountMismatchError(f"{blob_path}: {len(blob)} bytes, manifest declares {declared} words")
    if _sha256(blob) != manifest["blob"]["sha256"]:
        raise ChecksumError(f"{blob_path}: SHA-256 does not match manifest")
    words = np.frombuffer(blob, dtype="<u4").astype(np.uint32)

    layers, weights, biases, cursor = [], [], [], 0
    for i, entry in enumerate(manifest["layers"]):
        entry = dict(entry)
        w_ref, b_ref = entry.pop("weights", None), entry.pop("biases", None)
        try:
            layer = layer_from_dict(entry)
        except KeyError as exc:
            raise UnknownLayerError(f"layer {i}: {exc.args[0]}") from None
        except TypeError as exc:
            raise ModelFormatError(f"layer {i}: bad hyperparameters ({exc})") from None
        layers.append(layer)
        if not has_params(layer):
            if w_ref or b_ref:
                raise CountMismatchError(f"layer {i} ({layer.type}) declares parameters but takes none")
            weights.append(None)
            biases.append(None)
            continue
        arrays = []
        for ref, shape, what in ((w_ref, layer.weight_shape(), "weights"), (b_ref, layer.bias_shape(), "biases")):
            expected = int(np.prod(shape))
            if ref is None or int(ref["count"]) != expected:
                got = None if ref is None else ref["count"]
                raise CountMismatchError(f"layer {i} ({layer.type}) {what}: manifest count {got}, layer needs {expected}")
            off = int(ref["offset"])
            if off != cursor or off + expected > declared:
                raise CountMismatchError(f"layer {i} {what}: offset {off} overlaps or leaves the blob (expected {cursor})")
            arrays.append(words[off : off + expected].view(np.float32).reshape(shape))
            cursor += expected
        weights.append(arrays[0])
        biases.append(arrays[1])
    if cursor != declared:
        raise CountMismatchError(f"manifest layers use {cursor} words, blob holds {declared}")
    return Network(layers, weights, biases, manifest["input_shape"])


@dataclass
class LabeledDataset:
    samples: np.ndarray  # [count, *dims] float32
    labels: np.ndarray  # [count] uint8
    num_classes: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if len(self.samples) != len(self.labels):
            raise DatasetFormatError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise DatasetFormatError(f"label {int(self.labels.max())} >= class count {self.num_classes}")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return tuple(self.samples.shape[1:])


def save_dataset(dataset: LabeledDataset, path) -> None:
    dims = dataset.sample_shape
    header = DATASET_MAGIC + struct.pack("<HH", DATASET_VERSION, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    header += struct.pack("<II", len(dataset), dataset.num_classes)
    Path(path).write_bytes(header + dataset.samples.astype("<f4").tobytes() + dataset.labels.tobytes())


def load_dataset(path) -> LabeledDataset:
    data = Path(path).read_bytes()
    if data[:4] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        version, ndim = struct.unpack_from("<HH", data, 4)
        if version != DATASET_VERSION:
            raise DatasetFormatError(f"{path}: unsupported dataset version {version}")
        dims = struct.unpack_from(f"<{ndim}I", data, 8)
        pos = 8 + 4 * ndim
        count, classes = struct.unpack_from("<II", data, pos)
    except struct.error:
        raise DatasetFormatError(f"{path}: truncated header") from None
    pos += 8
    n_values = count * int(np.prod(dims))
    if len(data) != pos + 4 * n_values + count:
        raise DatasetFormatError(f"{path}: size {len(data)} does not match header ({count} samples of {dims})")
    samples = np.frombuffer(data, dtype="<f4", count=n_values, offset=pos).astype(np.float32)
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos + 4 * n_values).copy()
    return LabeledDataset(samples.reshape((count, *dims)), labels, classes)
