"""Which parameter bits a protection scheme covers.

Selectors name bits by layer, parameter kind and bit class; a bit is
*requested* when any selector matches it.  The scheme then widens the
request to what storage can actually protect:

* TMR triplicates whole 32-bit words, so one requested bit protects its word.
* ECC encodes groups of ``group_width`` consecutive bits of the flat bit
  stream (word ``w``, bit ``b`` sits at stream position ``32 * w + b``); a
  group with any requested bit is encoded entirely.

Policy file format, one directive per line, ``#`` comments::

    name exponent+first-sign
    scheme ecc            # or tmr
    group_width 32
    protect layers=all kinds=both bits=exponent
    protect layers=0 kinds=weight bits=sign
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..bits import Kind, parse_bit_selection
from ..engine import parse_index_set, parse_kinds
from ..nn import Network

SCHEMES = ("tmr", "ecc")


class PolicyError(ValueError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


@dataclass(frozen=True)
class Selector:
    layers: frozenset | None = None
    kinds: frozenset = frozenset({Kind.WEIGHT, Kind.BIAS})
    bits: frozenset = frozenset(range(32))

    def describe(self) -> str:
        layers = "all" if self.layers is None else ",".join(map(str, sorted(self.layers)))
        kinds = "both" if len(self.kinds) == 2 else str(next(iter(self.kinds)))
        return f"layers={layers} kinds={kinds} bits={','.join(map(str, sorted(self.bits)))}"


@dataclass(frozen=True)
class ProtectionPolicy:
    scheme: str
    selectors: tuple = ()
    group_width: int = 32
    name: str = ""

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise PolicyError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.group_width < 1:
            raise PolicyError(f"group width must be >= 1, got {self.group_width}")
        object.__setattr__(self, "selectors", tuple(self.selectors))

    @classmethod
    def none(cls, scheme="ecc", group_width=32):
        return cls(scheme, (), group_width, "none")

    @classmethod
    def full(cls, scheme="ecc", group_width=32):
        return cls(scheme, (Selector(),), group_width, "all")

    @classmethod
    def bit_classes(cls, scheme, tokens, layers=None, group_width=32, name=None):
        sel = Selector(layers=None if layers is None else frozenset(layers), bits=parse_bit_selection(tokens))
        return cls(scheme, (sel,), group_width, name or str(tokens))

    def with_selectors(self, *selectors, name=None):
        return ProtectionPolicy(self.scheme, self.selectors + tuple(selectors), self.group_width,
                                name or self.name)

    def requested_mask(self, network: Network) -> np.ndarray:
        """``[n_words, 32]`` bool: bits matched by some selector."""
        rows = []
        for layer, kind, arr in network.arrays():
            m = np.zeros((arr.size, 32), dtype=bool)
            for sel in self.selectors:
                if (sel.layers is None or layer in sel.layers) and kind in sel.kinds:
                    m[:, sorted(sel.bits)] = True
            rows.append(m)
        return np.concatenate(rows) if rows else np.zeros((0, 32), bool)

    def protected_mask(self, network: Network) -> np.ndarray:
        """``[n_words, 32]`` bool after widening to TMR words / ECC groups."""
        req = self.requested_mask(network)
        if self.scheme == "tmr":
            return np.repeat(req.any(axis=1, keepdims=True), 32, axis=1)
        groups = self.protected_groups(network, req)
        stream = np.repeat(groups, self.group_width)[: req.size]
        return stream.reshape(req.shape)

    def protected_groups(self, network: Network, requested=None) -> np.ndarray:
        """ECC: one bool per ``group_width``-bit group of the flat stream."""
        req = self.requested_mask(network) if requested is None else requested
        stream = req.reshape(-1)
        n_groups = -(-stream.size // self.group_width)
        padded = np.zeros(n_groups * self.group_width, dtype=bool)
        padded[: stream.size] = stream
        return padded.reshape(n_groups, self.group_width).any(axis=1)

    def to_text(self) -> str:
        lines = [f"name {self.name}"] if self.name else []
        lines += [f"scheme {self.scheme}", f"group_width {self.group_width}"]
        lines += [f"protect {s.describe()}" for s in self.selectors]
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "ProtectionPolicy":
        scheme, width, name, selectors = None, 32, "", []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, rest = line.partition(" ")
            rest = rest.strip()
            try:
                if key == "scheme":
                    scheme = rest.lower()
                    if scheme not in SCHEMES:
                        raise ValueError(f"unknown scheme {rest!r}")
                elif key == "group_width":
                    width = int(rest)
                    if width < 1:
                        raise ValueError("group_width must be >= 1")
                elif key == "name":
                    name = rest
                elif key == "protect":
                    selectors.append(_parse_selector(rest))
                else:
                    raise ValueError(f"unknown directive {key!r}")
            except PolicyError:
                raise
            except ValueError as exc:
                raise PolicyError(str(exc), lineno) from None
        if scheme is None:
            raise PolicyError("policy has no 'scheme' line")
        return cls(scheme, tuple(selectors), width, name)


def _parse_selector(text: str) -> Selector:
    kw = {}
    for item in text.split():
        key, eq, value = item.partition("=")
        if not eq:
            raise ValueError(f"expected key=value, got {item!r}")
        if key == "layers":
            kw["layers"] = parse_index_set(value)
        elif key == "kinds":
            kw["kinds"] = parse_kinds(value)
        elif key == "bits":
            kw["bits"] = parse_bit_selection(value)
        else:
            raise ValueError(f"unknown selector key {key!r}")
    return Selector(**kw)


def load_policy(path) -> ProtectionPolicy:
    with open(path) as fh:
        return ProtectionPolicy.parse(fh.read())
