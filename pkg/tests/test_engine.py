import json

import numpy as np
import pytest

from ssipp import fixtures, nn
from ssipp.bits import BitAddress, Kind
from ssipp.engine import (CheckpointMismatch, FaultEvaluator, PerturbationResult, ScanScope, build_report,
                          evaluate, parse_index_set, read_results_csv, scan, ssipp, top1_accuracy,
                          write_results_csv)
from ssipp.model_io import LabeledDataset
from oracles import naive_scan


def threshold_net():
    """Class 0 iff x > 0.5; negating the bias moves the threshold to -0.5."""
    return nn.Network([nn.FullyConnected(1, 2)], [np.array([[1.0, 0.0]])], [np.array([0.0, 0.5])], (1,))


def threshold_data():
    xs = np.array([2, 3, 4, 5, 6, -2, -3, -4, -5, 0.25], np.float32)[:, None]
    ys = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
    return LabeledDataset(xs, ys, 2)


def test_evaluate_fixture_accuracy():
    assert evaluate(fixtures.model("tiny_fc"), fixtures.dataset("tiny4")) == 1.0


def test_constant_logits_pick_class_zero():
    net = nn.Network([nn.FullyConnected(3, 4)], [np.zeros((3, 4))], [np.zeros(4)], (3,))
    assert evaluate(net, fixtures.dataset("balanced4")) == 0.25


def test_nan_prediction_counts_as_wrong():
    logits = np.array([[np.nan, 0.0], [1.0, 0.0]])
    assert top1_accuracy(logits, np.array([0, 0])) == 0.5


def test_empty_dataset_rejected():
    empty = LabeledDataset(np.zeros((0, 3)), np.zeros(0), 2)
    with pytest.raises(ValueError):
        evaluate(fixtures.model("tiny_fc"), empty)


def test_single_sign_flip_drops_one_sample_in_ten():
    net, ds = threshold_net(), threshold_data()
    addr = BitAddress(0, Kind.BIAS, 1, 31)
    res = FaultEvaluator(net, ds).result(addr)
    assert res.p_original == 1.0
    assert res.delta_p == pytest.approx(0.1, abs=1e-12)
    results = scan(net, ds, ScanScope(kinds=[Kind.BIAS], bits=[31]))
    value, where = ssipp(results)
    assert where == addr
    assert value == pytest.approx(0.1, abs=1e-12)


def test_exhaustive_scan_matches_naive_oracle_fc():
    net, ds = fixtures.model("tiny_fc"), fixtures.dataset("tiny4")
    p0, ref = naive_scan(net, ds)
    results = scan(net, ds)
    assert len(results) == len(ref) == net.bit_count
    for r in results:
        a = r.address
        assert r.p_original == p0
        assert r.p_sipp == ref[(a.layer, str(a.kind), a.element, a.bit)], a


def test_scan_leaves_network_unchanged():
    net = fixtures.model("tiny_cnn")
    before = net.digest()
    scan(net, fixtures.dataset("patterns"), ScanScope(layers=[5]))
    assert net.digest() == before


def test_workers_agree():
    net, ds = fixtures.model("tiny_cnn"), fixtures.dataset("patterns")
    scope = ScanScope(layers=[0, 1])
    one = scan(net, ds, scope, workers=1)
    two = scan(net, ds, scope, workers=2, chunk_size=50)
    assert one == two


def test_results_sorted_and_cover_scope():
    net = fixtures.model("tiny_cnn")
    scope = ScanScope(layers=[1], kinds=[Kind.BIAS], bits=[31, 30])
    res = scan(net, fixtures.dataset("patterns"), scope)
    addrs = [r.address for r in res]
    assert addrs == sorted(addrs)
    assert addrs == scope.addresses(net)
    assert len(addrs) == 2 * 2


def test_ssipp_of_union_is_max():
    net, ds = fixtures.model("tiny_cnn"), fixtures.dataset("patterns")
    a = scan(net, ds, ScanScope(bits=[31]))
    b = scan(net, ds, ScanScope(bits=[22, 21]))
    union = scan(net, ds, ScanScope(bits=[31, 22, 21]))
    assert ssipp(union)[0] == max(ssipp(a)[0], ssipp(b)[0])
    assert ssipp(union)[0] >= ssipp(a)[0]


def test_sampled_scope_reproducible():
    net = fixtures.model("tiny_cnn")
    s1 = ScanScope(fraction=0.1, seed=7).addresses(net)
    s2 = ScanScope(fraction=0.1, seed=7).addresses(net)
    s3 = ScanScope(fraction=0.1, seed=8).addresses(net)
    assert s1 == s2 and s1 != s3
    assert len(s1) == int(np.ceil(0.1 * net.bit_count))
    assert s1 == sorted(s1)
    with pytest.raises(ValueError):
        ScanScope(fraction=0)


def test_ssipp_tie_goes_to_lowest_address():
    lo, hi = BitAddress(0, Kind.BIAS, 0, 3), BitAddress(0, Kind.WEIGHT, 4, 31)
    results = [PerturbationResult(lo, 1.0, 0.5), PerturbationResult(hi, 1.0, 0.5),
               PerturbationResult(BitAddress(1, Kind.WEIGHT, 0, 0), 1.0, 0.9)]
    assert ssipp(results) == (0.5, hi)
    with pytest.raises(ValueError):
        ssipp([])


def test_negative_delta_kept():
    r = PerturbationResult(BitAddress(0, Kind.WEIGHT, 0, 0), 0.5, 0.75)
    assert r.delta_p == -0.25


class TestCheckpoint:
    def setup_method(self):
        self.net, self.ds = fixtures.model("tiny_cnn"), fixtures.dataset("patterns")
        self.scope = ScanScope(layers=[1, 5], bits=[31, 30, 22])

    def test_resume_after_interruption(self, tmp_path, monkeypatch):
        ck = tmp_path / "scan.jsonl"
        full = scan(self.net, self.ds, self.scope, checkpoint=ck)
        lines = ck.read_text().splitlines()
        assert len(lines) == 1 + len(full)
        # keep half the records plus a torn line, as after a crash mid-write
        kept = lines[: 1 + len(full) // 2]
        ck.write_text("\n".join(kept) + "\n" + lines[-1][:10])

        calls = []
        original = FaultEvaluator.performance

        def counting(self, addr, word=None):
            calls.append(addr)
            return original(self, addr, word)

        monkeypatch.setattr(FaultEvaluator, "performance", counting)
        resumed = scan(self.net, self.ds, self.scope, checkpoint=ck)
        assert resumed == full
        assert len(calls) == len(full) - len(full) // 2
        assert len(ck.read_text().splitlines()) == 1 + len(full)

    def test_mismatched_checkpoint_rejected(self, tmp_path):
        ck = tmp_path / "scan.jsonl"
        scan(self.net, self.ds, self.scope, checkpoint=ck)
        with pytest.raises(CheckpointMismatch):
            scan(self.net, self.ds, ScanScope(layers=[1], bits=[31]), checkpoint=ck)
        other = self.net.flip(BitAddress(5, Kind.BIAS, 0, 0))
        with pytest.raises(CheckpointMismatch):
            scan(other, self.ds, self.scope, checkpoint=ck)


def test_csv_round_trip(tmp_path):
    res = scan(fixtures.model("tiny_cnn"), fixtures.dataset("patterns"), ScanScope(layers=[5], bits=[31, 30]))
    write_results_csv(res, tmp_path / "r.csv")
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == "layer,kind,element,bit,bit_class,p_sipp,delta_p"
    assert read_results_csv(tmp_path / "r.csv", res[0].p_original) == res


def test_report_groups():
    net, ds = fixtures.model("tiny_cnn"), fixtures.dataset("patterns")
    results = scan(net, ds, ScanScope(layers=[5]))
    rep = build_report(results, ScanScope(layers=[5]))
    assert set(rep.per_field) == {"sign", "exponent", "fraction"}
    assert list(rep.per_bit_class)[:3] == ["sign", "ex1", "ex2"]
    assert rep.ssipp == max(v for v, _ in rep.per_field.values())
    js = rep.to_json(top_k=3, network_hash=net.digest())
    assert js["schema"] == "ssipp-scan-summary/1"
    assert len(js["top"]) == 3
    json.dumps(js)


def test_scope_parsing():
    s = ScanScope.parse("layers 0,2-3\nkinds weight\nbits sign ex1  # worst bits\nsample 0.5\nseed 3\n")
    assert s.layers == {0, 2, 3}
    assert s.kinds == {Kind.WEIGHT}
    assert s.bits == {31, 30}
    assert (s.fraction, s.seed) == (0.5, 3)
    with pytest.raises(ValueError, match="line 2"):
        ScanScope.parse("layers all\nbogus 1\n")
    assert parse_index_set("all") is None


def test_scan_rejects_bad_scope():
    net, ds = fixtures.model("tiny_fc"), fixtures.dataset("tiny4")
    with pytest.raises(ValueError):
        scan(net, ds, ScanScope(layers=[1]))  # ReLU layer has no parameters
    with pytest.raises(IndexError):
        scan(net, ds, [BitAddress(0, Kind.WEIGHT, 99, 0)])
