import csv
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayes_snn.bayes import GaussianLearner, init_gaussian
from bayes_snn.data import synthetic_patterns
from bayes_snn.local import ReadoutMatrices
from bayes_snn.metrics import (bin_index, bin_predictions, curves_from_prefix, ece, evaluate,
                               ood_histogram, reliability_diagram, report_from_probs,
                               time_resolved)
from bayes_snn.srm import LayerTopology, SrmNetwork

FOUR = ([0.65, 0.65, 0.95, 0.95], [1, 0, 1, 1])


def test_bin_boundaries():
    assert bin_index([1.0], 10)[0] == 9
    assert bin_index([0.1], 10)[0] == 0
    assert bin_index([0.3], 10)[0] == 2
    assert bin_index([0.0], 10)[0] == 0
    assert bin_index([0.30000000000000004], 10)[0] == 3
    with pytest.raises(ValueError):
        bin_index([0.5], 0)
    with pytest.raises(ValueError):
        bin_index([1.5], 10)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10_000), st.integers(1, 20))
def test_bin_index_matches_exact_ceiling(num, M):
    # x = num / 10_000 as a double; the oracle uses the double's exact rational value
    x = num / 10_000
    exact = Fraction(x) * M
    want = int(-(-exact.numerator // exact.denominator)) - 1
    assert bin_index([x], M)[0] == want


def test_four_sample_bins_and_ece():
    b = bin_predictions(*FOUR, M=10)
    assert b.counts[6] == 2 and b.counts[9] == 2 and b.total == 4
    assert b.accuracy[6] == 0.5 and b.confidence[6] == pytest.approx(0.65)
    assert b.accuracy[9] == 1.0 and b.confidence[9] == pytest.approx(0.95)
    assert np.isnan(b.accuracy[0])
    assert ece(b) == pytest.approx(0.1, abs=1e-15)


def test_ece_extremes():
    assert ece(bin_predictions(np.ones(5), np.zeros(5))) == 1.0
    assert ece(bin_predictions([], [])) == 0.0


def test_perfectly_calibrated_bins_give_zero():
    conf, ok = [], []
    for m, c in enumerate([0.15, 0.35, 0.5, 0.75]):
        # 20 samples at confidence c with round(20c) correct, c chosen so 20c is whole
        k = round(20 * c)
        conf += [c] * 20
        ok += [1] * k + [0] * (20 - k)
    assert ece(bin_predictions(conf, ok)) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ece_bounded_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(1, 60)
    conf = rng.random(n)
    ok = rng.random(n) < 0.6
    e = ece(bin_predictions(conf, ok))
    assert 0.0 <= e <= 1.0
    perm = rng.permutation(n)
    assert ece(bin_predictions(conf[perm], ok[perm])) == pytest.approx(e, abs=1e-12)


def test_reliability_flags():
    rows = reliability_diagram(bin_predictions(*FOUR))
    assert rows[6]["status"] == "overconfident"
    assert rows[9]["status"] == "underconfident"
    assert rows[0]["status"] == "empty" and rows[0]["accuracy"] is None
    assert rows[9]["hi"] == 1.0 and len(rows) == 10


def test_ood_histogram_examples():
    uniform = np.full(7, 1 / 11)
    h = ood_histogram(uniform, 10)
    assert h[0] == 7 and h.sum() == 7
    assert ood_histogram(np.ones(3), 10)[9] == 3
    mixed = [0.05, 0.5, 0.55, 0.99, 1.0, 0.2]
    np.testing.assert_array_equal(ood_histogram(mixed, 10), [1, 1, 0, 0, 1, 1, 0, 0, 0, 2])


def test_curves_from_prefix_last_matches_report():
    rng = np.random.default_rng(0)
    raw = rng.dirichlet(np.ones(3), size=(6, 10))
    prefix = np.cumsum(raw, axis=0) / np.arange(1, 7)[:, None, None]
    labels = rng.integers(0, 3, 10)
    curves = curves_from_prefix(prefix, labels)
    rep = report_from_probs(prefix[-1], labels)
    assert curves.accuracy[-1] == rep.accuracy and curves.ece[-1] == rep.ece
    assert len(curves.rows()) == 6 and curves.rows()[0]["t"] == 1


def small_model():
    data = synthetic_patterns(3, num_classes=3, channels=12, active=3, T=6)
    topo = LayerTopology(12, [6, 5])
    net = SrmNetwork(topo)
    ro = ReadoutMatrices.build(topo, 3, seed=2)
    post, prior = init_gaussian(topo.num_synapses, 0, 0.5)
    return data, net, ro, GaussianLearner(post, prior, 0.1, 1e-3)


def test_time_resolved_full_prefix_equals_evaluate():
    data, net, ro, learner = small_model()
    curves = time_resolved(net, ro, learner, data, 3, seed=1)
    rep = evaluate(net, ro, learner, data, 3, seed=1)
    assert curves.accuracy[-1] == rep.accuracy
    assert curves.ece[-1] == pytest.approx(rep.ece, abs=1e-15)
    assert curves.accuracy.shape == (6,)


def test_report_write(tmp_path):
    data, net, ro, learner = small_model()
    rep = evaluate(net, ro, learner, data, 2, with_time=True)
    rep.write(tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["num_examples"] == len(data) and len(doc["bins"]) == 10
    assert len(doc["time_resolved"]) == 6
    with open(tmp_path / "predictions.csv") as fh:
        assert len(list(csv.DictReader(fh))) == len(data)
    assert (tmp_path / "bins.csv").exists() and (tmp_path / "time.csv").exists()
