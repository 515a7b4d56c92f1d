"""Single-error-correcting Hamming code.

Codeword positions are numbered from 1.  Parity bits sit at the powers of
two; parity bit ``2**k`` covers every position whose index has bit ``k``
set, so the syndrome of a codeword with one flipped bit is exactly the
index of that bit.  Data bits fill the remaining positions in order.

This is plain SEC: two flipped bits are silently miscorrected.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def required_parity_bits(d: int) -> int:
    """Smallest r with ``r + d <= 2**r - 1``."""
    if d < 1:
        raise ValueError(f"need at least one data bit, got {d}")
    r = 1
    while r + d > 2**r - 1:
        r += 1
    return r


def _layout(n: int):
    pos = np.arange(1, n + 1)
    is_parity = (pos & (pos - 1)) == 0
    return pos, is_parity


@dataclass(frozen=True)
class HammingCodeword:
    bits: np.ndarray  # uint8 0/1, index 0 is codeword position 1
    d: int
    r: int

    def __len__(self):
        return self.d + self.r

    @property
    def syndrome(self) -> int:
        return syndrome(self.bits)

    def flipped(self, position: int) -> "HammingCodeword":
        """Copy with the bit at 1-indexed ``position`` inverted."""
        if not 1 <= position <= len(self):
            raise IndexError(f"codeword position {position} outside 1..{len(self)}")
        bits = self.bits.copy()
        bits[position - 1] ^= 1
        return HammingCodeword(bits, self.d, self.r)

    def __str__(self):
        return "".join(map(str, self.bits.tolist()))


def syndrome(bits) -> int:
    bits = np.asarray(bits, dtype=np.uint8)
    pos = np.arange(1, len(bits) + 1)
    return int(np.bitwise_xor.reduce(pos[bits == 1], initial=0))


def data_positions(d: int) -> np.ndarray:
    """1-indexed codeword positions holding data bits 0..d-1."""
    n = d + required_parity_bits(d)
    pos, is_parity = _layout(n)
    return pos[~is_parity]


def parity_positions(d: int) -> np.ndarray:
    n = d + required_parity_bits(d)
    pos, is_parity = _layout(n)
    return pos[is_parity]


def hamming_encode(data) -> HammingCodeword:
    data = np.asarray(data, dtype=np.uint8).reshape(-1)
    d = data.size
    r = required_parity_bits(d)
    bits = np.zeros(d + r, dtype=np.uint8)
    bits[data_positions(d) - 1] = data
    s = syndrome(bits)
    for k in range(r):
        if (s >> k) & 1:
            bits[(1 << k) - 1] = 1
    return HammingCodeword(bits, d, r)


def _split_length(n: int) -> tuple[int, int]:
    r = n.bit_length()  # number of powers of two <= n
    d = n - r
    if d < 1 or required_parity_bits(d) != r:
        raise ValueError(f"{n} is not a valid Hamming codeword length")
    return d, r


def hamming_decode(codeword):
    """Return ``(data, corrected_position)``; the position is None when clean."""
    bits = np.array(codeword.bits if isinstance(codeword, HammingCodeword) else codeword, dtype=np.uint8)
    d, _ = _split_length(bits.size)
    s = syndrome(bits)
    corrected = None
    if s:
        if s <= bits.size:
            bits[s - 1] ^= 1
        corrected = s
    return bits[data_positions(d) - 1], corrected


def word_to_bits(word: int, width: int = 32) -> np.ndarray:
    """LSB-first bit vector of an integer."""
    return np.array([(int(word) >> i) & 1 for i in range(width)], dtype=np.uint8)


def bits_to_word(bits) -> int:
    return sum(int(b) << i for i, b in enumerate(bits))
