"""Probability that a stored network sees at least one SEU bit flip.

With ``n = N * W * T / t`` independent bit-intervals each flipping with
probability ``p``, the exact value is ``1 - (1 - p)**n``.  Powering
directly is hopeless at p ~ 1e-24, so the exact mode evaluates
``-expm1(n * log1p(-p))``.  The first-order approximation ``n * p`` is only
meaningful while ``n * p`` is small; above ``APPROXIMATION_LIMIT`` it is
flagged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

# terrestrial-neutron per-bit flip probability within one nanosecond
P_SINGLE_DEFAULT = 1.33e-24
NS_PER_DAY = 86_400 * 1e9
MONTH_NS = 30 * NS_PER_DAY
APPROXIMATION_LIMIT = 0.1


@dataclass(frozen=True)
class SeuExposure:
    n_params: float
    bits_per_param: float = 32
    lifetime: float = MONTH_NS  # ns
    interval: float = 1.0  # ns
    p_single: float = P_SINGLE_DEFAULT

    def __post_init__(self):
        for name in ("n_params", "bits_per_param", "lifetime", "interval"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.p_single < 1:
            raise ValueError(f"p_single must lie in (0, 1), got {self.p_single}")

    @property
    def trials(self) -> float:
        return self.n_params * self.bits_per_param * (self.lifetime / self.interval)


class SeuProbability(NamedTuple):
    probability: float
    mode: str
    approximation_warning: bool


def seu_flip_probability(exposure: SeuExposure, mode: str = "exact") -> SeuProbability:
    linear = exposure.trials * exposure.p_single
    warn = linear > APPROXIMATION_LIMIT
    if mode == "approximate":
        return SeuProbability(linear, mode, warn)
    if mode != "exact":
        raise ValueError(f"mode must be 'exact' or 'approximate', not {mode!r}")
    p = -math.expm1(exposure.trials * math.log1p(-exposure.p_single))
    return SeuProbability(min(max(p, 0.0), 1.0), mode, warn)
