"""Inject a single flip into protected storage and read it back."""
from __future__ import annotations

import numpy as np

from ..bits import BitAddress
from ..engine import FaultEvaluator, PerturbationResult, top1_accuracy
from ..nn import Network
from .hamming import bits_to_word, data_positions, hamming_decode, hamming_encode
from .policy import ProtectionPolicy
from .tmr import tmr_vote


class ProtectedStorage:
    """A network's parameter words as stored under a protection policy."""

    def __init__(self, network: Network, policy: ProtectionPolicy):
        self.network = network
        self.policy = policy
        self.words = network.flat_words()
        self.mask = policy.protected_mask(network)
        self._offsets = {(l, k): network.word_offset(l, k) for l, k, _ in network.arrays()}

    def word_index(self, addr: BitAddress) -> int:
        self.network.check_address(addr)
        return self._offsets[(addr.layer, addr.kind)] + addr.element

    def is_protected(self, addr: BitAddress) -> bool:
        return bool(self.mask[self.word_index(addr), addr.bit])

    def inject(self, addr: BitAddress, target: int | None = None) -> int:
        """Flip one stored bit and return the word the reader sees for ``addr``.

        ``target`` picks which stored bit is hit: for TMR the copy index
        (0-2, flipping ``addr.bit`` in that copy); for ECC a 1-indexed
        position in the codeword of ``addr``'s group, parity positions
        included.  By default the flip lands on ``addr``'s own data bit.
        """
        w = self.word_index(addr)
        original = int(self.words[w])
        if not self.mask[w, addr.bit]:
            if target is not None:
                raise ValueError(f"{addr} is unprotected; only its own bit can be hit")
            return original ^ (1 << addr.bit)

        if self.policy.scheme == "tmr":
            copies = [original] * 3
            copy = 0 if target is None else target
            if copy not in (0, 1, 2):
                raise ValueError(f"TMR copy index {copy} outside 0..2")
            copies[copy] ^= 1 << addr.bit
            return tmr_vote(*copies)

        d = self.policy.group_width
        pos = 32 * w + addr.bit
        g0 = (pos // d) * d
        stream = np.array([(int(self.words[(g0 + i) // 32]) >> ((g0 + i) % 32)) & 1
                           for i in range(min(d, self.words.size * 32 - g0))], dtype=np.uint8)
        code = hamming_encode(stream)
        hit = int(data_positions(stream.size)[pos - g0]) if target is None else target
        data, _ = hamming_decode(code.flipped(hit))
        # reassemble the word for addr from the decoded group
        bits = [(original >> b) & 1 for b in range(32)]
        for i, bit in enumerate(data.tolist()):
            p = g0 + i
            if p // 32 == w:
                bits[p % 32] = bit
        return bits_to_word(bits)


def apply_and_inject(network: Network, policy: ProtectionPolicy, addr: BitAddress,
                     target: int | None = None) -> int:
    return ProtectedStorage(network, policy).inject(addr, target)


def protected_scan(network, dataset, policy, addresses, metric=top1_accuracy):
    """Re-run the fault scan with every flip routed through protected storage."""
    storage = ProtectedStorage(network, policy)
    ev = FaultEvaluator(network, dataset, metric)
    out = []
    for a in sorted(addresses):
        out.append(PerturbationResult(a, ev.p_original, ev.performance(a, storage.inject(a))))
    return out
