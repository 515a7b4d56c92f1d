"""Single-bit fault scans and the SSIPP worst-case measure.

A scan visits every selected parameter bit, flips it, evaluates the whole
dataset on the perturbed network, and records the drop in performance.
The flip is never written into the base network: each evaluation copies
the one affected parameter array, so the base stays bit-identical and can
be shared read-only between workers.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .bits import BitAddress, Kind, classify_bit, parse_bit_selection
from .model_io import LabeledDataset
from .nn import Network, predict_batch, run_layers

log = logging.getLogger(__name__)

Metric = Callable[[np.ndarray, np.ndarray], float]


def top1_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax equals the label; NaN rows count as wrong."""
    pred = predict_batch(logits)
    return float(np.count_nonzero(pred == labels.astype(np.int64))) / len(labels)


METRICS = {"accuracy": top1_accuracy}


# ---------------------------------------------------------------------------
# scope


@dataclass(frozen=True)
class ScanScope:
    """Which bits a scan visits.

    ``layers=None`` means every parameterised layer; ``bits`` holds bit
    indices (see :func:`ssipp.bits.parse_bit_selection`).  With
    ``fraction`` set, a reproducible random subset of that size is drawn
    from ``seed``.
    """

    layers: frozenset | None = None
    kinds: frozenset = frozenset({Kind.WEIGHT, Kind.BIAS})
    bits: frozenset = frozenset(range(32))
    fraction: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.layers is not None:
            object.__setattr__(self, "layers", frozenset(int(l) for l in self.layers))
        object.__setattr__(self, "kinds", frozenset(Kind(k) for k in self.kinds))
        object.__setattr__(self, "bits", frozenset(int(b) for b in self.bits))
        if self.fraction is not None and not 0 < self.fraction <= 1:
            raise ValueError(f"sampling fraction {self.fraction} outside (0, 1]")

    def addresses(self, network: Network) -> list[BitAddress]:
        out = []
        bits = sorted(self.bits)
        for layer, kind, arr in network.arrays():
            if self.layers is not None and layer not in self.layers:
                continue
            if kind not in self.kinds:
                continue
            out.extend(BitAddress(layer, kind, e, b) for e in range(arr.size) for b in bits)
        if self.fraction is not None and out:
            k = max(1, math.ceil(self.fraction * len(out)))
            pick = np.random.default_rng(self.seed).choice(len(out), size=k, replace=False)
            out = [out[i] for i in sorted(pick)]
        return out

    def key(self) -> dict:
        return {
            "layers": None if self.layers is None else sorted(self.layers),
            "kinds": sorted(str(k) for k in self.kinds),
            "bits": sorted(self.bits),
            "fraction": self.fraction,
            "seed": self.seed,
        }

    @classmethod
    def parse(cls, text: str) -> "ScanScope":
        """Read a scope file: one ``key value...`` directive per line.

        Keys: ``layers`` (``all`` or indices/ranges like ``0,2-4``),
        ``kinds`` (weight, bias, both), ``bits`` (class tokens),
        ``sample`` (fraction), ``seed``.  ``#`` starts a comment.
        """
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, rest = line.partition(" ")
            try:
                if key == "layers":
                    kw["layers"] = parse_index_set(rest)
                elif key == "kinds":
                    kw["kinds"] = parse_kinds(rest)
                elif key == "bits":
                    kw["bits"] = parse_bit_selection(rest)
                elif key == "sample":
                    kw["fraction"] = float(rest)
                elif key == "seed":
                    kw["seed"] = int(rest)
                else:
                    raise ValueError(f"unknown directive {key!r}")
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        return cls(**kw)


def parse_index_set(text: str):
    """``all`` -> None; otherwise ``0,2-4`` style lists."""
    text = text.strip()
    if text in ("", "all", "*"):
        return None
    out = set()
    for part in text.replace(" ", ",").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.update(range(int(lo), int(hi) + 1))
        else:
            out.add(int(part))
    return frozenset(out)


def parse_kinds(text: str) -> frozenset:
    text = text.strip().lower()
    if text in ("both", "all", ""):
        return frozenset({Kind.WEIGHT, Kind.BIAS})
    return frozenset(Kind.parse(t) for t in text.replace(",", " ").split())


# ---------------------------------------------------------------------------
# evaluation


def evaluate(network: Network, dataset: LabeledDataset, metric: Metric = top1_accuracy) -> float:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits = run_layers(network, dataset.samples).reshape(len(dataset), -1)
    return float(metric(logits, dataset.labels))


@dataclass(frozen=True)
class PerturbationResult:
    address: BitAddress
    p_original: float
    p_sipp: float

    @property
    def delta_p(self) -> float:
        return self.p_original - self.p_sipp


class FaultEvaluator:
    """Evaluates single-bit perturbations against a fixed base network.

    Activations entering each parameterised layer are computed once from
    the unmodified prefix of the network; a flip in layer ``l`` only
    re-runs layers ``l..end``.  The prefix is bit-identical either way, so
    this changes cost, not results.
    """

    def __init__(self, network: Network, dataset: LabeledDataset, metric: Metric = top1_accuracy):
        if len(dataset) == 0:
            raise ValueError("cannot evaluate on an empty dataset")
        self.network = network
        self.dataset = dataset
        self.metric = metric
        self._acts = {}
        self.p_original = evaluate(network, dataset, metric)

    def _input_to(self, layer: int) -> np.ndarray:
        if layer not in self._acts:
            prev = max((l for l in self._acts if l < layer), default=0)
            x = self._acts.get(prev, self.dataset.samples)
            self._acts[layer] = run_layers(self.network, x, prev, layer)
        return self._acts[layer]

    def perturbed_logits(self, addr: BitAddress, word: int | None = None) -> np.ndarray:
        """Logits with the addressed word flipped (or replaced by ``word``)."""
        net = self.network
        net.check_address(addr)
        arr = net.param(addr.layer, addr.kind).copy()
        flat = arr.reshape(-1).view(np.uint32)
        flat[addr.element] = flat[addr.element] ^ np.uint32(1 << addr.bit) if word is None else np.uint32(word)
        w, b = net.weights[addr.layer], net.biases[addr.layer]
        if addr.kind == Kind.WEIGHT:
            w = arr
        else:
            b = arr
        out = net.layers[addr.layer](self._input_to(addr.layer), w, b)
        return run_layers(net, out, addr.layer + 1).reshape(len(self.dataset), -1)

    def performance(self, addr: BitAddress, word: int | None = None) -> float:
        return float(self.metric(self.perturbed_logits(addr, word), self.dataset.labels))

    def result(self, addr: BitAddress) -> PerturbationResult:
        return PerturbationResult(addr, self.p_original, self.performance(addr))


# per-process state for pool workers
_worker: FaultEvaluator | None = None


def _init_worker(network, dataset, metric):
    global _worker
    _worker = FaultEvaluator(network, dataset, metric)


def _run_chunk(addrs):
    return [(a, _worker.performance(a)) for a in addrs]


def scan(
    network: Network,
    dataset: LabeledDataset,
    scope: ScanScope | Sequence[BitAddress] | None = None,
    metric: Metric = top1_accuracy,
    workers: int = 1,
    checkpoint: str | Path | None = None,
    chunk_size: int = 256,
) -> list[PerturbationResult]:
    """Flip each selected bit in turn and record the performance drop.

    ``scope`` may be a :class:`ScanScope` or an explicit address list.
    Results come back sorted by address regardless of ``workers``.  With
    ``checkpoint`` set, results are appended to that JSON-lines file as
    they complete and a rerun skips addresses already recorded there.
    """
    scope = ScanScope() if scope is None else scope
    addrs = scope.addresses(network) if isinstance(scope, ScanScope) else sorted(scope)
    if not addrs:
        raise ValueError("scan scope selects no bits")
    for a in addrs:
        network.check_address(a)

    evaluator = FaultEvaluator(network, dataset, metric)
    done: dict[BitAddress, float] = {}
    sink = None
    if checkpoint is not None:
        scope_key = scope.key() if isinstance(scope, ScanScope) else {"addresses": [str(a) for a in addrs]}
        done, sink = _open_checkpoint(Path(checkpoint), network.digest(), scope_key, evaluator.p_original)
    todo = [a for a in addrs if a not in done]
    log.info("scan: %d bits selected, %d already done", len(addrs), len(addrs) - len(todo))

    try:
        if workers <= 1:
            for a in todo:
                p = evaluator.performance(a)
                done[a] = p
                if sink:
                    _append(sink, a, p)
        else:
            chunks = [todo[i : i + chunk_size] for i in range(0, len(todo), chunk_size)]
            with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(network, dataset, metric)) as pool:
                for part in pool.map(_run_chunk, chunks):
                    for a, p in part:
                        done[a] = p
                        if sink:
                            _append(sink, a, p)
    finally:
        if sink:
            sink.close()

    return [PerturbationResult(a, evaluator.p_original, done[a]) for a in addrs]


# ---------------------------------------------------------------------------
# checkpoint (JSON lines: header, then one {"addr", "p_sipp"} per result)


class CheckpointMismatch(RuntimeError):
    pass


def _open_checkpoint(path: Path, digest: str, scope_key: dict, p_original: float):
    header = {"checkpoint": "ssipp-scan", "version": 1, "network": digest, "scope": scope_key,
              "p_original": p_original}
    done = {}
    if path.exists() and path.stat().st_size:
        lines = path.read_text().splitlines()
        found = json.loads(lines[0])
        if {k: found.get(k) for k in header} != header:
            raise CheckpointMismatch(f"{path} belongs to a different network, scope or seed")
        for line in lines[1:]:
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                break  # torn final line from an interrupted write
            done[BitAddress.parse(rec["addr"])] = float(rec["p_sipp"])
        # rewrite without a possibly torn tail
        with path.open("w") as fh:
            fh.write(json.dumps(header) + "\n")
            for a in sorted(done):
                fh.write(json.dumps({"addr": str(a), "p_sipp": done[a]}) + "\n")
    else:
        path.write_text(json.dumps(header) + "\n")
    return done, path.open("a")


def _append(sink, addr, p):
    sink.write(json.dumps({"addr": str(addr), "p_sipp": p}) + "\n")
    sink.flush()


# ---------------------------------------------------------------------------
# SSIPP and reports


def ssipp(results: Iterable[PerturbationResult]) -> tuple[float, BitAddress]:
    """Worst-case drop and its address; ties go to the lowest address."""
    results = list(results)
    if not results:
        raise ValueError("ssipp of an empty result set")
    best = min(results, key=lambda r: (-r.delta_p, r.address))
    return best.delta_p, best.address


def _group_max(results, keyfn):
    groups = {}
    for r in results:
        groups.setdefault(keyfn(r), []).append(r)
    return {k: ssipp(v) for k, v in sorted(groups.items())}


@dataclass
class SsippReport:
    p_original: float
    ssipp: float
    argmax: BitAddress
    per_layer: dict
    per_bit_class: dict
    per_field: dict
    results: list = field(repr=False)
    scope: dict | None = None

    def to_json(self, top_k: int | None = 10, **extra) -> dict:
        def fmt(groups):
            return {str(k): {"ssipp": v, "argmax": str(a)} for k, (v, a) in groups.items()}

        ranked = sorted(self.results, key=lambda r: (-r.delta_p, r.address))
        out = {
            "schema": "ssipp-scan-summary/1",
            "p_original": self.p_original,
            "ssipp": self.ssipp,
            "argmax": str(self.argmax),
            "n_results": len(self.results),
            "per_layer": fmt(self.per_layer),
            "per_bit_class": fmt(self.per_bit_class),
            "per_field": fmt(self.per_field),
            "top": [{"addr": str(r.address), "delta_p": r.delta_p} for r in ranked[:top_k]],
            "scope": self.scope,
        }
        out.update(extra)
        return out


def build_report(results: Sequence[PerturbationResult], scope: ScanScope | None = None) -> SsippReport:
    value, addr = ssipp(results)
    return SsippReport(
        p_original=results[0].p_original,
        ssipp=value,
        argmax=addr,
        per_layer=_group_max(results, lambda r: r.address.layer),
        # sign first, then exponent and fraction MSB-first
        per_bit_class={str(classify_bit(-nb)): v
                       for nb, v in _group_max(results, lambda r: -r.address.bit).items()},
        per_field=_group_max(results, lambda r: classify_bit(r.address.bit).field),
        results=list(results),
        scope=scope.key() if scope is not None else None,
    )


CSV_COLUMNS = ("layer", "kind", "element", "bit", "bit_class", "p_sipp", "delta_p")


def write_results_csv(results: Iterable[PerturbationResult], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in sorted(results, key=lambda r: r.address):
            a = r.address
            fh.write(f"{a.layer},{a.kind},{a.element},{a.bit},{classify_bit(a.bit)},{r.p_sipp!r},{r.delta_p!r}\n")


def read_results_csv(path, p_original: float) -> list[PerturbationResult]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            a = BitAddress(int(row["layer"]), Kind.parse(row["kind"]), int(row["element"]), int(row["bit"]))
            out.append(PerturbationResult(a, p_original, float(row["p_sipp"])))
    return out
