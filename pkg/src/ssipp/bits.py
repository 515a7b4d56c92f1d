"""IEEE-754 binary32 bit manipulation.

Bit indices follow a fixed public convention, independent of host byte
order: bit 31 is the sign, bits 30..23 the exponent (MSB..LSB) and bits
22..0 the fraction (MSB..LSB).  Index 30 is the most significant exponent
bit ("Ex1") and index 22 the most significant fraction bit ("Frac1").
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

SIGN_BIT = 31
EXPONENT_BITS = range(23, 31)
FRACTION_BITS = range(0, 23)
EX1 = 30
FRAC1 = 22

# relative_error returns this for 0/0-like and NaN cases
UNDEFINED = math.nan


class Kind(enum.IntEnum):
    """Parameter kind; the integer value fixes ordering (weights first)."""

    WEIGHT = 0
    BIAS = 1

    @classmethod
    def parse(cls, text: str) -> "Kind":
        t = text.strip().lower()
        if t in ("w", "weight", "weights"):
            return cls.WEIGHT
        if t in ("b", "bias", "biases"):
            return cls.BIAS
        raise ValueError(f"unknown parameter kind {text!r}")

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True, order=True)
class BitAddress:
    """One bit of one stored parameter: the unit of fault injection.

    Ordering is lexicographic on (layer, kind, element, bit), which is also
    the tie-break order used when reporting the worst bit.
    """

    layer: int
    kind: Kind
    element: int
    bit: int

    def __post_init__(self):
        if not 0 <= self.bit <= 31:
            raise ValueError(f"bit index {self.bit} outside 0..31")
        if self.layer < 0 or self.element < 0:
            raise ValueError(f"negative index in {self}")
        object.__setattr__(self, "kind", Kind(self.kind))

    def __str__(self) -> str:
        return f"{self.layer}:{self.kind}:{self.element}:{self.bit}"

    @classmethod
    def parse(cls, text: str) -> "BitAddress":
        """Parse ``layer:kind:element:bit``, e.g. ``0:weight:3:31``."""
        parts = text.split(":")
        if len(parts) != 4:
            raise ValueError(f"bit address {text!r} is not layer:kind:element:bit")
        return cls(int(parts[0]), Kind.parse(parts[1]), int(parts[2]), int(parts[3]))


@dataclass(frozen=True)
class BitClass:
    """Role of a bit inside a binary32 word.

    ``field`` is one of "sign", "exponent", "fraction"; ``rank`` counts from
    the field's most significant bit, starting at 1.  The short names are
    ``sign``, ``ex1``..``ex8`` (ex1 is bit 30) and ``frac1``..``frac23``
    (frac1 is bit 22).
    """

    field: str
    rank: int = 1

    def __str__(self) -> str:
        if self.field == "sign":
            return "sign"
        return f"{'ex' if self.field == 'exponent' else 'frac'}{self.rank}"

    @classmethod
    def parse(cls, text: str) -> "BitClass":
        t = text.strip().lower()
        if t == "sign":
            return cls("sign")
        for prefix, field, size in (("ex", "exponent", 8), ("frac", "fraction", 23)):
            rest = t[len(prefix):]
            if t.startswith(prefix) and rest.isdigit():
                rank = int(rest)
                if not 1 <= rank <= size:
                    raise ValueError(f"{field} rank {rank} outside 1..{size}")
                return cls(field, rank)
        raise ValueError(f"unknown bit class {text!r}")

    @property
    def bit_index(self) -> int:
        if self.field == "sign":
            return SIGN_BIT
        if self.field == "exponent":
            return 31 - self.rank
        return 23 - self.rank


def _check_bit(bit_index: int) -> None:
    if not 0 <= int(bit_index) <= 31:
        raise ValueError(f"bit index {bit_index} outside 0..31")


def classify_bit(bit_index: int) -> BitClass:
    _check_bit(bit_index)
    if bit_index == SIGN_BIT:
        return BitClass("sign")
    if bit_index >= 23:
        return BitClass("exponent", 31 - bit_index)
    return BitClass("fraction", 23 - bit_index)


def float_to_bits(value) -> int:
    """Bit pattern of a binary32 value as a Python int (NaN payload kept)."""
    return int(np.asarray(value, dtype=np.float32).reshape(()).view(np.uint32))


def bits_to_float(bits: int) -> np.float32:
    return np.array(bits & 0xFFFFFFFF, dtype=np.uint32).view(np.float32)[()]


def flip_bit(bits, bit_index: int):
    """Flip one bit of a 32-bit pattern.

    Works on a Python int or on a ``uint32`` array (vectorised).  Flipping
    the same bit twice restores the pattern exactly.
    """
    _check_bit(bit_index)
    if isinstance(bits, np.ndarray):
        return bits ^ np.uint32(1 << bit_index)
    return (int(bits) ^ (1 << bit_index)) & 0xFFFFFFFF


def flip_float(value, bit_index: int) -> np.float32:
    """Convenience wrapper: flip a bit of a binary32 *value*."""
    return bits_to_float(flip_bit(float_to_bits(value), bit_index))


def relative_error(original, perturbed):
    """|x' - x| / |x|, evaluated in binary64.

    Returns ``UNDEFINED`` (NaN) when ``x == 0`` or either value is NaN and
    ``inf`` when the perturbed value overflowed.  Accepts arrays.
    """
    with np.errstate(all="ignore"):  # signalling NaNs warn on the cast
        x = np.asarray(original, dtype=np.float64)
        xp = np.asarray(perturbed, dtype=np.float64)
        rel = np.abs(xp - x) / np.abs(x)
    undefined = (x == 0) | np.isnan(x) | np.isnan(xp)
    rel = np.where(undefined, np.nan, rel)
    rel = np.where(~undefined & np.isinf(xp) & np.isfinite(x), np.inf, rel)
    if rel.ndim == 0:
        return float(rel)
    return rel


@dataclass(frozen=True)
class Interval:
    """Predicted range of the relative error for one flip.

    ``overflow`` marks that a non-finite result (Inf, or NaN when the
    exponent saturates over a nonzero fraction) is an admissible outcome.
    """

    low: float
    high: float
    low_closed: bool = True
    high_closed: bool = True
    overflow: bool = False

    def __contains__(self, rel) -> bool:
        return bool(self.contains(rel))

    def contains(self, rel):
        rel = np.asarray(rel, dtype=np.float64)
        above = rel >= self.low if self.low_closed else rel > self.low
        below = rel <= self.high if self.high_closed else rel < self.high
        ok = above & below
        if self.overflow:
            ok = ok | ~np.isfinite(rel)
        return ok


# Unsupported inputs (zero, denormal, Inf, NaN) get None.
UNSUPPORTED = None

SIGN_INTERVAL = Interval(2.0, 2.0)
# Clearing an exponent bit divides by 2**(2**k); 1 is reached exactly when
# the result lands on zero (e.g. smallest normal -> 0), and values of 1 - 2**-64 or closer
# round to 1.0 in binary64.
EXPONENT_CLEAR_INTERVAL = Interval(0.5, 1.0)
# Setting an exponent bit multiplies by 2**(2**k); bit 23 doubles the value
# (relative error exactly 1).
EXPONENT_SET_INTERVAL = Interval(1.0, 2.0**128, overflow=True)
FRACTION_INTERVAL = Interval(0.0, 0.5, low_closed=False)


def delta_class_bound(value, bit_index: int):
    """Analytic relative-error interval for flipping ``bit_index`` of ``value``.

    Only finite, nonzero, normal values are covered; anything else returns
    ``UNSUPPORTED``.
    """
    _check_bit(bit_index)
    bits = float_to_bits(value)
    exponent = (bits >> 23) & 0xFF
    if exponent == 0 or exponent == 0xFF:
        return UNSUPPORTED
    return class_interval(bit_index, bool((bits >> bit_index) & 1))


def class_interval(bit_index: int, bit_is_set: bool) -> Interval:
    """Interval for a bit given its current value (normal inputs only)."""
    _check_bit(bit_index)
    if bit_index == SIGN_BIT:
        return SIGN_INTERVAL
    if bit_index >= 23:
        return EXPONENT_CLEAR_INTERVAL if bit_is_set else EXPONENT_SET_INTERVAL
    return FRACTION_INTERVAL


def is_normal(bits: np.ndarray) -> np.ndarray:
    exponent = (np.asarray(bits, dtype=np.uint32) >> np.uint32(23)) & np.uint32(0xFF)
    return (exponent != 0) & (exponent != 0xFF)


def parse_bit_selection(tokens) -> frozenset:
    """Bit indices named by class tokens.

    Accepts ``sign``, ``exponent``, ``fraction``, ``all``, single positions
    such as ``ex1`` or ``frac23``, and raw indices
    ``0``..``31``.
    """
    if isinstance(tokens, str):
        tokens = tokens.replace(",", " ").split()
    out = set()
    for tok in tokens:
        t = str(tok).strip().lower()
        if t == "all":
            out.update(range(32))
        elif t in ("exponent", "exp"):
            out.update(EXPONENT_BITS)
        elif t in ("fraction", "frac"):
            out.update(FRACTION_BITS)
        elif t.isdigit():
            _check_bit(int(t))
            out.add(int(t))
        else:
            out.add(BitClass.parse(t).bit_index)
    return frozenset(out)
