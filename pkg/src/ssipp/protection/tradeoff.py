"""Overhead versus residual SSIPP across a sequence of policies."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Sequence

from ..engine import PerturbationResult, ssipp
from ..nn import Network
from .overhead import LogicCostModel, storage_overhead
from .policy import ProtectionPolicy
from .simulate import ProtectedStorage


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class TradeoffPoint:
    policy: str
    scheme: str
    normalized_storage: float
    normalized_logic: float
    residual_ssipp: float
    normalized_ssipp: float
    added_bits_per_parameter: float


def residual_ssipp(network: Network, policy: ProtectionPolicy, results: Sequence[PerturbationResult]) -> float:
    """Worst drop once protected bits are masked.

    A masked flip reads back the original word, so it contributes a drop of
    exactly 0; unprotected bits keep their scanned drop.
    """
    if not results:
        raise ValueError("no scan results")
    storage = ProtectedStorage(network, policy)
    drops = [0.0 if storage.is_protected(r.address) else r.delta_p for r in results]
    return max(drops)


def tradeoff_curve(network: Network, results: Sequence[PerturbationResult],
                   policies: Sequence[ProtectionPolicy],
                   costs: LogicCostModel = LogicCostModel()) -> list[TradeoffPoint]:
    base, _ = ssipp(results)
    if base <= 0:
        raise NormalizationError(
            "unprotected SSIPP is 0, so residual SSIPP cannot be normalised; "
            "scan a larger scope or a dataset on which some flip changes a prediction")
    points = []
    for i, policy in enumerate(policies):
        report = storage_overhead(policy, network, costs)
        res = residual_ssipp(network, policy, results)
        points.append(TradeoffPoint(
            policy=policy.name or f"policy{i}",
            scheme=policy.scheme,
            normalized_storage=report.normalized_storage,
            normalized_logic=report.normalized_logic,
            residual_ssipp=res,
            normalized_ssipp=res / base,
            added_bits_per_parameter=report.added_bits_per_parameter,
        ))
    return points


def write_tradeoff_csv(points: Sequence[TradeoffPoint], path) -> None:
    fields = list(TradeoffPoint.__dataclass_fields__)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fields, lineterminator="\n")
        w.writeheader()
        for p in points:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(p).items()})
