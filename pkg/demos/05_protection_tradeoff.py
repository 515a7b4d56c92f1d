"""Protecting the sensitive bits: ECC vs TMR, and what partial protection buys."""
# %%
from ssipp import fixtures
from ssipp.bits import BitAddress, Kind
from ssipp.engine import scan, ssipp
from ssipp.protection import (ProtectionPolicy, apply_and_inject, ecc_vs_tmr_logic, ecc_vs_tmr_storage,
                              storage_overhead, tmr_vote, tradeoff_curve)
from ssipp.protection.hamming import hamming_decode, hamming_encode

# %% Hamming SEC on four data bits
code = hamming_encode([1, 0, 1, 1])
print("codeword", code)
data, pos = hamming_decode(code.flipped(6))
print("flip position 6 ->", data.tolist(), "corrected at", pos)

# %% TMR: any single bad copy is outvoted
print(hex(tmr_vote(0xCAFE, 0xCAFE ^ 0x100, 0xCAFE)))

# %% storage and logic ratios, ECC over TMR
for d in (8, 32, 100):
    print(f"d={d:3d}: storage {ecc_vs_tmr_storage(d):.4f}  logic {ecc_vs_tmr_logic(d):.2f}")

# %% a flip inside protected storage reads back clean; outside it gets through
net = fixtures.model("tiny_cnn")
addr = BitAddress(0, Kind.WEIGHT, 7, 30)
word = net.get_word(0, Kind.WEIGHT, 7)
for policy in (ProtectionPolicy.none(), ProtectionPolicy.bit_classes("ecc", "ex1"), ProtectionPolicy.full("tmr")):
    print(f"{policy.name:>8s}: read back {'clean' if apply_and_inject(net, policy, addr) == word else 'corrupted'}")

# %% overhead vs residual worst-case drop
results = scan(net, fixtures.dataset("patterns"))
print("unprotected SSIPP", ssipp(results)[0])
policies = [ProtectionPolicy.none("ecc", 8)]
for tokens in ("ex1", "ex1 ex2", "exponent", "exponent sign", "all"):
    policies.append(ProtectionPolicy.bit_classes("ecc", tokens, group_width=8, name=tokens))
for p in tradeoff_curve(net, results, policies):
    print(f"{p.policy:>14s}: storage {p.normalized_storage:.3f}  logic {p.normalized_logic:.3f}  "
          f"residual {p.residual_ssipp:.4f} ({p.normalized_ssipp:.2f})")
print("full ECC adds", storage_overhead(ProtectionPolicy.full("ecc", 8), net).added_bits_per_parameter,
      "bits per parameter at d=8; TMR adds 64")
