"""Storage and logic cost of a protection policy.

Storage is exact bit accounting.  Logic is a *proxy model*: absolute
units carry no silicon meaning, only ratios do.  A TMR voter costs
``voter_per_bit`` units per protected bit; an ECC encoder+decoder for a
group of ``d`` data bits and ``r`` parity bits costs
``xor_unit * d * ceil(log2(d + r))``.  The default ``xor_unit`` is set so
that fully protecting 32-bit parameters with ECC costs 3.5x the logic of
TMR (32 * 6 * 7/12 = 112 vs 32).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..nn import Network
from .hamming import required_parity_bits
from .policy import ProtectionPolicy


@dataclass(frozen=True)
class LogicCostModel:
    voter_per_bit: float = 1.0
    xor_unit: float = 7 / 12

    def __post_init__(self):
        if self.voter_per_bit <= 0 or self.xor_unit <= 0:
            raise ValueError("logic cost constants must be positive")


@dataclass(frozen=True)
class OverheadReport:
    scheme: str
    protected_bits: int
    raw_bits: int
    added_bits: int
    logic_units: float
    full_added_bits: int
    full_logic_units: float

    @property
    def relative_overhead(self) -> float:
        return self.added_bits / self.raw_bits if self.raw_bits else 0.0

    @property
    def added_bits_per_parameter(self) -> float:
        return 32 * self.added_bits / self.raw_bits if self.raw_bits else 0.0

    @property
    def normalized_storage(self) -> float:
        return self.added_bits / self.full_added_bits if self.full_added_bits else 0.0

    @property
    def normalized_logic(self) -> float:
        return self.logic_units / self.full_logic_units if self.full_logic_units else 0.0

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "protected_bits": self.protected_bits,
            "raw_bits": self.raw_bits,
            "added_bits": self.added_bits,
            "relative_overhead": self.relative_overhead,
            "added_bits_per_parameter": self.added_bits_per_parameter,
            "logic_units": self.logic_units,
            "full_added_bits": self.full_added_bits,
            "full_logic_units": self.full_logic_units,
            "normalized_storage": self.normalized_storage,
            "normalized_logic": self.normalized_logic,
        }


def _group_sizes(policy: ProtectionPolicy, total_bits: int, groups: np.ndarray) -> np.ndarray:
    d = policy.group_width
    sizes = np.full(groups.size, d)
    if groups.size and total_bits % d:
        sizes[-1] = total_bits % d
    return sizes[groups]


def _raw_costs(policy: ProtectionPolicy, network: Network, costs: LogicCostModel):
    mask = policy.protected_mask(network)
    raw = mask.size
    if policy.scheme == "tmr":
        words = int(mask.any(axis=1).sum())
        return int(mask.sum()), raw, 64 * words, costs.voter_per_bit * 32 * words
    sizes = _group_sizes(policy, raw, policy.protected_groups(network))
    added = logic = 0
    for d in sizes.tolist():
        r = required_parity_bits(d)
        added += r
        logic += costs.xor_unit * d * math.ceil(math.log2(d + r))
    return int(mask.sum()), raw, added, logic


def storage_overhead(policy: ProtectionPolicy, network: Network,
                     costs: LogicCostModel = LogicCostModel()) -> OverheadReport:
    """Overhead of ``policy`` plus the full-protection reference for the same scheme."""
    protected, raw, added, logic = _raw_costs(policy, network, costs)
    full = ProtectionPolicy.full(policy.scheme, policy.group_width)
    _, _, full_added, full_logic = _raw_costs(full, network, costs)
    return OverheadReport(policy.scheme, protected, raw, added, logic, full_added, full_logic)


def logic_overhead(policy: ProtectionPolicy, network: Network,
                   costs: LogicCostModel = LogicCostModel()) -> float:
    return _raw_costs(policy, network, costs)[3]


def ecc_vs_tmr_storage(d: int) -> float:
    """ECC parity bits relative to TMR's two extra copies for ``d`` data bits."""
    return required_parity_bits(d) / (2 * d)


def ecc_vs_tmr_logic(d: int, costs: LogicCostModel = LogicCostModel()) -> float:
    r = required_parity_bits(d)
    return costs.xor_unit * d * math.ceil(math.log2(d + r)) / (costs.voter_per_bit * d)
