"""Single-bit fault sensitivity of binary32 neural network parameters.

Modules:

* :mod:`ssipp.bits` - binary32 bit flips, bit classes, relative-error bounds
* :mod:`ssipp.nn` - deterministic feedforward inference
* :mod:`ssipp.model_io` - manifest/blob models and binary datasets
* :mod:`ssipp.engine` - bit scans and the SSIPP worst-case measure
* :mod:`ssipp.seu` - probability of at least one upset in a stored model
* :mod:`ssipp.propagation` - closed-form sign-flip deltas
* :mod:`ssipp.protection` - TMR / Hamming ECC simulation and trade-offs
"""
from .bits import BitAddress, BitClass, Kind, classify_bit, delta_class_bound, flip_bit, relative_error
from .engine import (PerturbationResult, ScanScope, SsippReport, build_report, evaluate, scan, ssipp,
                     top1_accuracy)
from .model_io import LabeledDataset, load_dataset, load_model, save_dataset, save_model
from .nn import (AffineNorm, AvgPool, Conv2D, Flatten, FullyConnected, MaxPool, Network, ReLU, conv2d,
                 forward, fully_connected, predict, relu)
from .seu import SeuExposure, seu_flip_probability

__version__ = "0.1.0"
