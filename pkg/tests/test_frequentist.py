import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayes_snn.data import synthetic_patterns
from bayes_snn.frequentist import (SgdConfig, SgdLearner, SteState, make_learner, random_init,
                                   sgd_step, sign, ste_step, train_offline)
from bayes_snn.local import ReadoutMatrices
from bayes_snn.metrics import evaluate
from bayes_snn.srm import LayerTopology, SrmNetwork
from bayes_snn.training import LoopOptions, NonFiniteGradient, fit


def test_sgd_examples():
    w = np.array([0.5, -1.0])
    np.testing.assert_array_equal(sgd_step(w, np.zeros(2), 0.3), w)
    g = np.array([0.25, 2.0])
    np.testing.assert_array_equal(sgd_step(w, g, 1.0), w - g)
    batch = np.array([[1.0, 0.0], [3.0, 2.0]])
    np.testing.assert_allclose(sgd_step(w, batch, 1.0), w - batch.mean(0))


def test_sgd_rejects_nan():
    with pytest.raises(NonFiniteGradient):
        sgd_step(np.zeros(3), np.array([0.0, np.nan, 1.0]), 0.1)


def test_ste_examples():
    s = ste_step(SteState.from_latent(np.array([0.3])), np.array([1.0]), 0.5)
    assert s.latent[0] == pytest.approx(-0.2)
    assert s.quantized[0] == -1
    assert sign(np.array([0.0]))[0] == 1
    s = SteState.from_latent(np.array([0.2, -0.4]))
    np.testing.assert_array_equal(ste_step(s, np.zeros(2), 1.0).quantized, [1, -1])


def test_ste_closure_over_many_updates():
    rng = np.random.default_rng(0)
    s = SteState.from_latent(rng.uniform(-0.1, 0.1, 50))
    for _ in range(10_000):
        s = ste_step(s, rng.normal(size=50), 0.01)
        assert np.all(np.abs(s.quantized) == 1)
    np.testing.assert_array_equal(s.quantized, sign(s.latent))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 200))
def test_sgd_eta_zero_identity(seed, steps):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=7)
    w0 = w.copy()
    for _ in range(steps):
        w = sgd_step(w, rng.normal(size=7), 0.0)
    np.testing.assert_array_equal(w, w0)


def small_setup(binary=False, seed=0):
    data = synthetic_patterns(10, num_classes=2, channels=20, active=5, T=20, seed=seed)
    topo = LayerTopology(20, [8, 4])
    net = SrmNetwork(topo, binary=binary)
    random_init(net, seed)
    return data, net, ReadoutMatrices.build(topo, 2, seed=1)


def test_zero_epochs_leaves_weights():
    data, net, ro = small_setup()
    before = net.weights.copy()
    _, trace = train_offline(net, ro, data, SgdConfig(epochs=0))
    assert trace == []
    np.testing.assert_array_equal(net.weights, before)


def test_learner_eta_zero_keeps_weights():
    data, net, ro = small_setup()
    before = net.weights.copy()
    fit(SgdLearner(net.weights, 0.0), net, ro, data, 2, LoopOptions(8), seed=0)
    np.testing.assert_array_equal(net.weights, before)


def test_loss_trace_length_and_determinism():
    runs = []
    for _ in range(2):
        data, net, ro = small_setup()
        _, trace = train_offline(net, ro, data, SgdConfig(eta=0.05, epochs=3, batch_size=4))
        runs.append((trace, net.weights.copy()))
    assert len(runs[0][0]) == 3
    assert runs[0][0] == runs[1][0]
    np.testing.assert_array_equal(runs[0][1], runs[1][1])


def test_ste_training_keeps_binary_weights():
    data, net, ro = small_setup(binary=True)
    learner, _ = train_offline(net, ro, data, SgdConfig(eta=0.05, epochs=2, batch_size=5), "ste")
    assert np.all(np.abs(net.weights) == 1)
    np.testing.assert_array_equal(learner.quantized, sign(learner.latent))


def test_trainer_network_mismatch():
    _, net, _ = small_setup()
    with pytest.raises(ValueError):
        make_learner(net, "ste", 0.1)
    _, bnet, _ = small_setup(binary=True)
    with pytest.raises(ValueError):
        make_learner(bnet, "sgd", 0.1)


def test_separable_task_reaches_full_accuracy():
    data = synthetic_patterns(20, num_classes=2, channels=40, active=8, T=30)
    topo = LayerTopology(40, [32, 16])
    net = SrmNetwork(topo)
    random_init(net, 0)
    ro = ReadoutMatrices.build(topo, 2, seed=0)
    best = 0.0
    for epoch in range(20):
        train_offline(net, ro, data, SgdConfig(eta=0.05, epochs=1, batch_size=8, seed=epoch))
        learner = SgdLearner(net.weights, 0.05)
        best = max(best, evaluate(net, ro, learner, data, 1).accuracy)
        if best == 1.0:
            break
    assert best == 1.0
