"""Small networks and datasets shipped with the package for desk-scale runs.

The weights were produced offline by ``scripts/build_fixtures.py``;
provenance and accuracy are recorded in each manifest's ``comment``.
"""
from importlib import resources
from pathlib import Path

from .model_io import load_dataset, load_model
from .protection.policy import load_policy

MODELS = ("tiny_fc", "tiny_cnn")
DATASETS = ("tiny4", "balanced4", "patterns", "patterns_train")
POLICIES = ("none", "exponent", "exponent_sign", "all", "tmr_first_layer")


def path(name: str) -> Path:
    return Path(str(resources.files("ssipp") / "data" / name))


def model(name: str):
    return load_model(path(f"{name}.manifest"), path(f"{name}.bin"))


def dataset(name: str):
    return load_dataset(path(f"{name}.ds"))


def policy_path(name: str) -> Path:
    return path(f"policies/{name}.policy")


def policy(name: str):
    return load_policy(policy_path(name))
