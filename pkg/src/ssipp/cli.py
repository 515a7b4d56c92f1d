"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 internal error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import re
import sys
from pathlib import Path

from . import __version__
from .bits import BitAddress, parse_bit_selection
from .engine import (METRICS, CheckpointMismatch, ScanScope, build_report, evaluate, parse_index_set,
                     parse_kinds, read_results_csv, scan, write_results_csv)
from .model_io import DatasetFormatError, ModelFormatError, load_dataset, load_model, save_model
from .protection.hamming import parity_positions
from .protection import (NormalizationError, PolicyError, ProtectedStorage, load_policy, storage_overhead,
                         tradeoff_curve, write_tradeoff_csv)
from .seu import SeuExposure, seu_flip_probability

log = logging.getLogger("ssipp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    return p


def _load_model(args):
    return load_model(_existing(args.model), _existing(args.blob) if args.blob else None)


def _config_hash(args) -> str:
    cfg = {k: str(v) for k, v in sorted(vars(args).items()) if k not in ("func", "out", "out_dir")}
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _provenance(args, network=None) -> dict:
    out = {"tool": "ssipp", "version": __version__, "command": args.command, "config_hash": _config_hash(args)}
    if network is not None:
        out["network_hash"] = network.digest()
    out["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return out


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def _metric(name):
    if name not in METRICS:
        raise UsageError(f"unknown metric {name!r}; available: {sorted(METRICS)}")
    return METRICS[name]


_UNITS_NS = {"ns": 1.0, "us": 1e3, "ms": 1e6, "s": 1e9, "h": 3600e9, "day": 86400e9, "days": 86400e9,
             "month": 30 * 86400e9, "months": 30 * 86400e9, "year": 365 * 86400e9, "years": 365 * 86400e9}


def parse_duration(text: str) -> float:
    """``"1month"``, ``"2.5 s"``, ``"1e9"`` (bare numbers are ns) -> nanoseconds."""
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*([a-z]*)\s*", text)
    if not m or (m.group(2) and m.group(2) not in _UNITS_NS):
        raise argparse.ArgumentTypeError(f"bad duration {text!r}; use e.g. 1ns, 30days, 1month")
    return float(m.group(1)) * _UNITS_NS.get(m.group(2) or "ns")


def _scope_from_args(args) -> ScanScope:
    scope = ScanScope.parse(_existing(args.scope).read_text()) if args.scope else ScanScope()
    kw = {}
    if args.layers is not None:
        kw["layers"] = parse_index_set(args.layers)
    if args.kinds is not None:
        kw["kinds"] = parse_kinds(args.kinds)
    if args.bits is not None:
        kw["bits"] = parse_bit_selection(args.bits)
    if args.sample is not None:
        kw["fraction"] = args.sample
    if args.seed is not None:
        kw["seed"] = args.seed
    if kw:
        merged = {"layers": scope.layers, "kinds": scope.kinds, "bits": scope.bits,
                  "fraction": scope.fraction, "seed": scope.seed, **kw}
        scope = ScanScope(**merged)
    return scope


# ---------------------------------------------------------------------------
# commands


def cmd_eval(args):
    net = _load_model(args)
    data = load_dataset(_existing(args.data))
    p = evaluate(net, data, _metric(args.metric))
    report = {**_provenance(args, net), "metric": args.metric, "samples": len(data), "accuracy": p}
    sys.stdout.write(_write_json(report, args.out))
    return EXIT_OK


def cmd_scan(args):
    net = _load_model(args)
    data = load_dataset(_existing(args.data))
    scope = _scope_from_args(args)
    if not scope.addresses(net):
        raise DataError("scan scope selects no bits")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else out_dir / "scan.checkpoint.jsonl"
    results = scan(net, data, scope, _metric(args.metric), workers=args.workers, checkpoint=ckpt)
    report = build_report(results, scope)
    write_results_csv(results, out_dir / "scan.csv")
    summary = report.to_json(top_k=args.top_k, **_provenance(args, net))
    _write_json(summary, out_dir / "scan.json")
    print(f"P_original={report.p_original!r} SSIPP={report.ssipp!r} at {report.argmax} "
          f"({len(results)} bits) -> {out_dir}")
    return EXIT_OK


def cmd_inject(args):
    net = _load_model(args)
    try:
        addr = BitAddress.parse(args.address)
        perturbed = net.flip(addr)
    except (ValueError, IndexError) as exc:
        raise DataError(f"invalid address {args.address!r}: {exc}") from None
    out = Path(args.out_model)
    blob = Path(args.out_blob) if args.out_blob else out.with_suffix(".bin")
    save_model(perturbed, out, blob, comment=f"{args.model} with bit {addr} flipped")
    print(f"flipped {addr}: wrote {out} and {blob}")
    return EXIT_OK


def cmd_seu_prob(args):
    try:
        exposure = SeuExposure(args.params, args.width, args.lifetime, args.interval, args.p_single)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    exact = seu_flip_probability(exposure, "exact")
    approx = seu_flip_probability(exposure, "approximate")
    report = {
        "tool": "ssipp", "version": __version__, "command": "seu-prob",
        "n_params": args.params, "bits_per_param": args.width, "lifetime_ns": args.lifetime,
        "interval_ns": args.interval, "p_single": args.p_single,
        "exact": exact.probability, "approximate": approx.probability,
        "approximation_warning": approx.approximation_warning,
    }
    sys.stdout.write(_write_json(report, args.out))
    return EXIT_OK


def cmd_protect(args):
    net = _load_model(args)
    policy = load_policy(_existing(args.policy))
    storage = ProtectedStorage(net, policy)
    addrs = ScanScope(fraction=args.sample, seed=args.seed or 0).addresses(net)
    injected = masked = prot_injected = prot_masked = 0
    for a in addrs:
        original = int(storage.words[storage.word_index(a)])
        ok = storage.inject(a) == original
        injected += 1
        masked += ok
        if storage.is_protected(a):
            prot_injected += 1
            prot_masked += ok
    parity_hits = parity_masked = 0
    if policy.scheme == "ecc" and args.parity:
        width = policy.group_width
        for g, protected in enumerate(policy.protected_groups(net)):
            if not protected:
                continue
            first = g * width
            a = net.address_of(first // 32, first % 32)
            d = min(width, storage.words.size * 32 - first)
            for pos in parity_positions(d).tolist():
                parity_hits += 1
                parity_masked += storage.inject(a, target=pos) == int(storage.words[storage.word_index(a)])
    overhead = storage_overhead(policy, net)
    report = {
        **_provenance(args, net),
        "policy": policy.name, "scheme": policy.scheme, "group_width": policy.group_width,
        "injected": injected, "masked": masked, "masking_rate": masked / injected if injected else 0.0,
        "protected_injected": prot_injected, "protected_masked": prot_masked,
        "parity_injected": parity_hits, "parity_masked": parity_masked,
        "overhead": overhead.to_json(),
    }
    sys.stdout.write(_write_json(report, args.out))
    return EXIT_OK


def cmd_tradeoff(args):
    net = _load_model(args)
    scan_dir = Path(args.scan_dir)
    csv_path, json_path = scan_dir / "scan.csv", scan_dir / "scan.json"
    if not csv_path.exists() or not json_path.exists():
        raise DataError(f"no scan results in {scan_dir} (expected scan.csv and scan.json); "
                        f"run 'ssipp scan --out-dir {scan_dir}' first")
    summary = json.loads(json_path.read_text())
    if summary.get("network_hash") not in (None, net.digest()):
        raise DataError(f"scan results in {scan_dir} were produced for a different network")
    results = read_results_csv(csv_path, summary["p_original"])
    policies = [load_policy(_existing(p)) for p in args.policy]
    points = tradeoff_curve(net, results, policies)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tradeoff_csv(points, out_dir / "tradeoff.csv")
    _write_json({
        **_provenance(args, net),
        "unprotected_ssipp": summary["ssipp"],
        "p_original": summary["p_original"],
        "points": [p.__dict__ for p in points],
    }, out_dir / "tradeoff.json")
    for p in points:
        print(f"{p.policy:>24s}  storage={p.normalized_storage:.4f}  logic={p.normalized_logic:.4f}  "
              f"ssipp={p.residual_ssipp:.4f} ({p.normalized_ssipp:.3f})")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssipp", description="Single-bit parameter fault analysis for binary32 networks.")
    parser.add_argument("--version", action="version", version=f"ssipp {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_args(p):
        p.add_argument("--model", required=True, help="model manifest (JSON)")
        p.add_argument("--blob", help="parameter blob (default: file named in the manifest)")

    p = sub.add_parser("eval", help="evaluate a model on a dataset")
    model_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--metric", default="accuracy")
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scan", help="single-bit fault scan and SSIPP report")
    model_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--scope", help="scope file (directives: layers, kinds, bits, sample, seed)")
    p.add_argument("--layers", help="e.g. 'all' or '0,3-5'")
    p.add_argument("--kinds", help="weight, bias or both")
    p.add_argument("--bits", help="bit classes, e.g. 'sign,ex1,frac1' or 'exponent'")
    p.add_argument("--sample", type=float, help="random fraction of the selected bits")
    p.add_argument("--seed", type=int)
    p.add_argument("--metric", default="accuracy")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--checkpoint", help="resume log (default: OUT_DIR/scan.checkpoint.jsonl)")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("inject", help="write a copy of a model with one bit flipped")
    model_args(p)
    p.add_argument("--address", required=True, help="layer:kind:element:bit, e.g. 0:weight:3:31")
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-blob")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("seu-prob", help="probability of at least one upset")
    p.add_argument("--params", type=float, required=True, help="number of parameters N")
    p.add_argument("--width", type=float, default=32, help="bits per parameter W")
    p.add_argument("--lifetime", type=parse_duration, default=parse_duration("1month"),
                   help="device lifetime T (e.g. 1month, 30days; bare numbers are ns)")
    p.add_argument("--interval", type=parse_duration, default=1.0, help="test interval t (default 1ns)")
    p.add_argument("--p-single", type=float, default=1.33e-24, help="per-bit flip probability per interval")
    p.add_argument("--out")
    p.set_defaults(func=cmd_seu_prob)

    p = sub.add_parser("protect", help="verify masking and report overhead of a policy")
    model_args(p)
    p.add_argument("--policy", required=True)
    p.add_argument("--sample", type=float, help="random fraction of parameter bits to inject")
    p.add_argument("--seed", type=int)
    p.add_argument("--parity", action="store_true", help="also hit every ECC parity bit")
    p.add_argument("--out")
    p.set_defaults(func=cmd_protect)

    p = sub.add_parser("tradeoff", help="overhead vs residual SSIPP for a list of policies")
    model_args(p)
    p.add_argument("--scan-dir", required=True, help="directory written by 'ssipp scan'")
    p.add_argument("--policy", action="append", required=True, help="policy file (repeatable, in order)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_tradeoff)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ssipp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ModelFormatError, DatasetFormatError, PolicyError, NormalizationError,
            CheckpointMismatch, FileNotFoundError, json.JSONDecodeError, ValueError, IndexError) as exc:
        print(f"ssipp {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"ssipp {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
