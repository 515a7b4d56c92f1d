import csv
import json
import subprocess
import sys

import pytest

from ssipp import BitAddress, fixtures
from ssipp.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main, parse_duration
from ssipp.engine import evaluate
from ssipp.model_io import load_model

CNN = ["--model", str(fixtures.path("tiny_cnn.manifest"))]
FC = ["--model", str(fixtures.path("tiny_fc.manifest"))]
PATTERNS = ["--data", str(fixtures.path("patterns.ds"))]


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_eval(capsys):
    code, out, _ = run(capsys, "eval", *FC, "--data", str(fixtures.path("tiny4.ds")))
    assert code == EXIT_OK
    report = json.loads(out)
    assert report["accuracy"] == 1.0 and report["samples"] == 4
    assert report["network_hash"] == fixtures.model("tiny_fc").digest()


def test_eval_repeatable_apart_from_timestamp(capsys, tmp_path):
    outs = []
    for i in range(2):
        assert run(capsys, "eval", *CNN, *PATTERNS, "--out", str(tmp_path / f"e{i}.json"))[0] == EXIT_OK
        report = json.loads((tmp_path / f"e{i}.json").read_text())
        report.pop("generated_at")
        outs.append(report)
    assert outs[0] == outs[1]


def test_scan_writes_outputs(capsys, tmp_path):
    code, out, _ = run(capsys, "scan", *CNN, *PATTERNS, "--layers", "5", "--bits", "sign,ex1",
                       "--out-dir", str(tmp_path))
    assert code == EXIT_OK
    assert "SSIPP=" in out
    rows = list(csv.DictReader((tmp_path / "scan.csv").open()))
    assert len(rows) == 27 * 2
    summary = json.loads((tmp_path / "scan.json").read_text())
    assert summary["n_results"] == 54
    assert summary["scope"]["layers"] == [5]
    assert (tmp_path / "scan.checkpoint.jsonl").exists()
    # a second run resumes from the checkpoint and reproduces the CSV
    before = (tmp_path / "scan.csv").read_text()
    assert run(capsys, "scan", *CNN, *PATTERNS, "--layers", "5", "--bits", "sign,ex1",
               "--out-dir", str(tmp_path))[0] == EXIT_OK
    assert (tmp_path / "scan.csv").read_text() == before


def test_scan_scope_file(capsys, tmp_path):
    scope = tmp_path / "scope.txt"
    scope.write_text("layers 1\nkinds bias\nbits all\n")
    code, _, _ = run(capsys, "scan", *CNN, *PATTERNS, "--scope", str(scope), "--out-dir", str(tmp_path / "o"))
    assert code == EXIT_OK
    assert json.loads((tmp_path / "o" / "scan.json").read_text())["n_results"] == 64
    scope.write_text("layers 1\nwhatever\n")
    code, _, err = run(capsys, "scan", *CNN, *PATTERNS, "--scope", str(scope), "--out-dir", str(tmp_path / "p"))
    assert code == EXIT_DATA and "line 2" in err


def test_inject_round_trip(capsys, tmp_path):
    out_model = tmp_path / "flipped.manifest"
    code, _, _ = run(capsys, "inject", *CNN, "--address", "0:weight:7:30", "--out-model", str(out_model))
    assert code == EXIT_OK
    flipped = load_model(out_model)
    assert flipped.flip(BitAddress.parse("0:weight:7:30")).digest() == fixtures.model("tiny_cnn").digest()
    # flipping the exponent MSB of a conv weight wrecks the classifier
    code, out, _ = run(capsys, "eval", "--model", str(out_model), *PATTERNS)
    assert code == EXIT_OK
    assert json.loads(out)["accuracy"] < evaluate(fixtures.model("tiny_cnn"), fixtures.dataset("patterns"))


def test_inject_bad_address(capsys, tmp_path):
    code, _, err = run(capsys, "inject", *CNN, "--address", "9:weight:0:0", "--out-model", str(tmp_path / "x"))
    assert code == EXIT_DATA and "invalid address" in err


def test_seu_prob(capsys):
    code, out, _ = run(capsys, "seu-prob", "--params", "1e7", "--lifetime", "1month")
    assert code == EXIT_OK
    report = json.loads(out)
    assert report["approximate"] == pytest.approx(1.10, abs=0.005)
    assert report["exact"] == pytest.approx(0.668, abs=1e-3)
    assert report["approximation_warning"] is True


def test_seu_prob_validation(capsys):
    assert run(capsys, "seu-prob", "--params", "0")[0] == EXIT_USAGE
    assert run(capsys, "seu-prob", "--params", "1", "--lifetime", "3 fortnights")[0] == EXIT_USAGE


def test_parse_duration():
    assert parse_duration("1month") == 2.592e15
    assert parse_duration("30days") == 2.592e15
    assert parse_duration("2.5 s") == 2.5e9
    assert parse_duration("7") == 7.0


def test_protect(capsys):
    code, out, _ = run(capsys, "protect", *CNN, "--policy", str(fixtures.policy_path("all")), "--parity")
    assert code == EXIT_OK
    report = json.loads(out)
    assert report["injected"] == report["masked"] == 1632
    assert report["parity_injected"] == report["parity_masked"] == 204 * 4
    assert report["overhead"]["normalized_storage"] == 1.0


def test_protect_partial_policy(capsys):
    code, out, _ = run(capsys, "protect", *CNN, "--policy", str(fixtures.policy_path("tmr_first_layer")),
                       "--sample", "0.25", "--seed", "3")
    report = json.loads(out)
    assert code == EXIT_OK
    assert report["protected_masked"] == report["protected_injected"] > 0
    assert report["masked"] < report["injected"]


def test_policy_parse_error_reports_line(capsys, tmp_path):
    bad = tmp_path / "bad.policy"
    bad.write_text("scheme ecc\n\nprotect layers=0 bits=sign flavour=mint\n")
    code, _, err = run(capsys, "protect", *CNN, "--policy", str(bad))
    assert code == EXIT_DATA and "line 3" in err


def test_tradeoff(capsys, tmp_path):
    assert run(capsys, "scan", *CNN, *PATTERNS, "--out-dir", str(tmp_path / "scan"))[0] == EXIT_OK
    policies = []
    for name in ("none", "exponent", "all"):
        policies += ["--policy", str(fixtures.policy_path(name))]
    code, out, _ = run(capsys, "tradeoff", *CNN, "--scan-dir", str(tmp_path / "scan"), *policies,
                       "--out-dir", str(tmp_path / "t"))
    assert code == EXIT_OK
    points = json.loads((tmp_path / "t" / "tradeoff.json").read_text())["points"]
    assert [p["policy"] for p in points] == ["none", "exponent", "all"]
    assert points[-1]["residual_ssipp"] == 0.0
    assert (tmp_path / "t" / "tradeoff.csv").read_text().startswith("policy,scheme,")


def test_tradeoff_without_scan(capsys, tmp_path):
    code, _, err = run(capsys, "tradeoff", *CNN, "--scan-dir", str(tmp_path), "--policy",
                       str(fixtures.policy_path("all")), "--out-dir", str(tmp_path / "t"))
    assert code == EXIT_DATA and "no scan results" in err


def test_tradeoff_rejects_other_network(capsys, tmp_path):
    assert run(capsys, "scan", *FC, "--data", str(fixtures.path("tiny4.ds")),
               "--out-dir", str(tmp_path / "scan"))[0] == EXIT_OK
    code, _, err = run(capsys, "tradeoff", *CNN, "--scan-dir", str(tmp_path / "scan"), "--policy",
                       str(fixtures.policy_path("all")), "--out-dir", str(tmp_path / "t"))
    assert code == EXIT_DATA and "different network" in err


def test_missing_file_and_usage_errors(capsys, tmp_path):
    code, _, err = run(capsys, "eval", "--model", str(tmp_path / "nope.manifest"), *PATTERNS)
    assert code == EXIT_DATA and "file not found" in err
    assert run(capsys, "scan", *CNN)[0] == EXIT_USAGE  # missing --data and --out-dir
    assert run(capsys, "frobnicate")[0] == EXIT_USAGE
    assert run(capsys, "--help")[0] == EXIT_OK
    code, _, _ = run(capsys, "eval", *CNN, *PATTERNS, "--metric", "f1")
    assert code == EXIT_USAGE


def test_corrupt_blob_is_data_error(capsys, tmp_path):
    man = tmp_path / "m.manifest"
    assert run(capsys, "inject", *FC, "--address", "0:bias:1:0", "--out-model", str(man))[0] == EXIT_OK
    blob = tmp_path / "m.bin"
    blob.write_bytes(blob.read_bytes()[:-4])
    code, _, err = run(capsys, "eval", "--model", str(man), "--data", str(fixtures.path("tiny4.ds")))
    assert code == EXIT_DATA and "declares" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ssipp", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("ssipp ")
