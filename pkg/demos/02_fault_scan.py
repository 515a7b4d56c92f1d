"""Exhaustive single-bit scan of the fixture CNN and its worst-case drop."""
# %%
import tempfile
import time
from pathlib import Path

from ssipp import fixtures
from ssipp.engine import ScanScope, build_report, evaluate, scan

net = fixtures.model("tiny_cnn")
data = fixtures.dataset("patterns")
print(net)
print(f"{net.param_count()} parameters, {net.bit_count} bits, {len(data)} samples")
print("clean accuracy:", evaluate(net, data))

# %% flip every bit, one at a time
t0 = time.perf_counter()
results = scan(net, data, ScanScope())
print(f"{len(results)} flips in {time.perf_counter() - t0:.2f}s")

rep = build_report(results)
print(f"SSIPP = {rep.ssipp:.4f} at {rep.argmax}")

# %% where it hurts: by field, by bit, by layer
for field, (v, addr) in rep.per_field.items():
    print(f"{field:>9s}: worst drop {v:.4f} at {addr}")
for name in ("sign", "ex1", "ex2", "ex8", "frac1", "frac23"):
    print(f"{name:>6s}: {rep.per_bit_class[name][0]:.4f}")
for layer, (v, _) in rep.per_layer.items():
    print(f"layer {layer} ({net.layers[layer].type}): {v:.4f}")

# %% scans can be restricted and resumed; the checkpoint makes the second run free
with tempfile.TemporaryDirectory() as tmp:
    ck = Path(tmp) / "scan.jsonl"
    scope = ScanScope(bits=[31, 30], fraction=0.5, seed=1)
    first = scan(net, data, scope, checkpoint=ck)
    t0 = time.perf_counter()
    again = scan(net, data, scope, checkpoint=ck)
    print(f"sampled scan: {len(first)} flips, resumed rerun identical={first == again} "
          f"in {time.perf_counter() - t0:.3f}s")
