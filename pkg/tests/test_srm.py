import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayes_snn.srm import (DimensionError, KernelConfig, LayerTopology, SpikeTrain, SrmNetwork,
                           kernel_values, run_sequence, step)


def conv_oracle(kernel: np.ndarray, s: np.ndarray, t: int) -> float:
    """sum_{d>0} kernel[d] * s[t - d], with 1-based kernel index and 0-based t."""
    return sum(kernel[d - 1] * s[t - d] for d in range(1, t + 1))


def tiny_net(weights=None, **kw):
    topo = LayerTopology(1, [1, 1])
    net = SrmNetwork(topo, weights=weights, **kw)
    return net


def test_kernel_values_alpha_first_tap():
    a, b = kernel_values(KernelConfig(10, 5, 5), 3)
    assert a[0] == pytest.approx(math.exp(-0.1) - math.exp(-0.2), abs=1e-15)
    assert b[0] == pytest.approx(math.exp(-0.2))


def test_kernel_values_decay_and_horizon():
    a, b = kernel_values(KernelConfig(), 400)
    assert abs(a[-1]) < 1e-15 and abs(b[-1]) < 1e-15
    with pytest.raises(ValueError):
        kernel_values(KernelConfig(), 0)


def test_degenerate_alpha_rejected():
    with pytest.raises(ValueError):
        KernelConfig(tau_mem=5, tau_syn=5)
    with pytest.raises(ValueError):
        KernelConfig(tau_ref=0)
    KernelConfig(tau_mem=5, tau_syn=5, kernel_kind="single_exponential")


def test_topology_layout_and_split():
    topo = LayerTopology(3, [4, 2])
    assert topo.layer_shapes == [(4, 3), (2, 4)]
    assert topo.num_synapses == 12 + 8
    flat = np.arange(20.0)
    w0, w1 = topo.split(flat)
    # post-neuron-major, pre-neuron-minor
    assert w0[1, 0] == 3 and w1[0, 3] == 15
    with pytest.raises(ValueError):
        LayerTopology(3, [4])
    with pytest.raises(DimensionError):
        topo.split(np.zeros(5))


def test_spike_train_validation():
    SpikeTrain(np.array([[0, 1], [1, 1]]))
    with pytest.raises(ValueError):
        SpikeTrain(np.array([[0, 2]]))
    with pytest.raises(ValueError):
        SpikeTrain(np.zeros((0, 3)))


def test_zero_weights_silent():
    topo = LayerTopology(5, [3, 2])
    net = SrmNetwork(topo)
    x = np.ones((20, 1, 5))
    run = run_sequence(net, x)
    assert all(np.all(s == 0) for s in run.spikes)
    assert all(np.all(u == 0) for u in run.membrane)


def test_single_synapse_fires_at_step_two():
    # A lone input spike at t=1 gives trace alpha_1 at t=2; weight K*theta with
    # K = 1.01 / alpha_1 pushes u above threshold there.
    cfg = KernelConfig(ref_gain=0.0)
    a1 = math.exp(-0.1) - math.exp(-0.2)
    K = 1.01 / a1
    net = SrmNetwork(LayerTopology(1, [1, 1]), cfg, weights=np.array([K * 1.0, 0.0]))
    x = np.zeros((4, 1, 1))
    x[0] = 1
    run = run_sequence(net, x)
    hidden = run.spikes[0][:, 0, 0]
    assert hidden[0] == 0 and hidden[1] == 1
    assert run.membrane[0][1, 0, 0] == pytest.approx(K * a1)


def test_single_exponential_trace_matches_convolution():
    cfg = KernelConfig(tau_syn=5, kernel_kind="single_exponential")
    net = SrmNetwork(LayerTopology(1, [1, 1]), cfg, weights=np.array([0.0, 0.0]))
    x = np.zeros((3, 1, 1))
    x[0] = x[1] = 1
    run = run_sequence(net, x)
    expect = math.exp(-1 / 5) + math.exp(-2 / 5)
    assert run.pre[0][2, 0, 0] == pytest.approx(expect, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 64),
       st.sampled_from(["alpha_function", "single_exponential"]))
def test_trace_equals_explicit_convolution(seed, T, kind):
    rng = np.random.default_rng(seed)
    cfg = KernelConfig(tau_mem=rng.uniform(2, 20), tau_syn=rng.uniform(1, 1.9), kernel_kind=kind,
                       tau_ref=rng.uniform(1, 10))
    topo = LayerTopology(3, [4, 2])
    net = SrmNetwork(topo, cfg, weights=rng.normal(0, 1.5, topo.num_synapses))
    x = (rng.random((T, 1, 3)) < 0.4).astype(float)
    run = run_sequence(net, x)
    alpha, beta = kernel_values(cfg, T)
    w0, w1 = topo.split(net.weights)
    h = run.spikes[0][:, 0, :]
    for t in range(T):
        for j in range(3):
            assert run.pre[0][t, 0, j] == pytest.approx(conv_oracle(alpha, x[:, 0, j], t), abs=1e-9)
        for j in range(4):
            assert run.pre[1][t, 0, j] == pytest.approx(conv_oracle(alpha, h[:, j], t), abs=1e-9)
        # membrane oracle for layer 0
        for i in range(4):
            u = sum(w0[i, j] * conv_oracle(alpha, x[:, 0, j], t) for j in range(3))
            u -= conv_oracle(beta, h[:, i], t)
            assert run.membrane[0][t, 0, i] == pytest.approx(u, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_threshold_monotone_in_weight(seed):
    rng = np.random.default_rng(seed)
    topo = LayerTopology(4, [3, 2])
    w = rng.normal(0, 0.5, topo.num_synapses)
    x = (rng.random((30, 1, 4)) < 0.5).astype(float)
    net = SrmNetwork(topo, weights=w.copy())
    base = run_sequence(net, x)
    i, j = rng.integers(3), rng.integers(4)
    w2 = w.copy()
    w2[i * 4 + j] += rng.uniform(0.01, 1.0)
    bumped = run_sequence(SrmNetwork(topo, weights=w2), x)
    fired = np.flatnonzero(np.maximum(base.spikes[0][:, 0, i], bumped.spikes[0][:, 0, i]))
    stop = fired[0] + 1 if fired.size else 30
    assert np.all(bumped.membrane[0][:stop, 0, i] >= base.membrane[0][:stop, 0, i] - 1e-12)


def test_reset_idempotence_and_loop_equivalence():
    rng = np.random.default_rng(3)
    topo = LayerTopology(6, [5, 3])
    net = SrmNetwork(topo, weights=rng.normal(0, 1, topo.num_synapses))
    x = (rng.random((25, 2, 6)) < 0.5).astype(float)
    run = run_sequence(net, x)
    state = net.new_state(2)
    manual = []
    for t in range(25):
        step(net, state, x[t])
        manual.append(np.concatenate([s.copy() for s in state.spikes], axis=1))
    state.reset()
    again = []
    for t in range(25):
        step(net, state, x[t])
        again.append(np.concatenate([s.copy() for s in state.spikes], axis=1))
    logged = np.concatenate(run.spikes, axis=2)
    np.testing.assert_array_equal(np.stack(manual), logged)
    np.testing.assert_array_equal(np.stack(manual), np.stack(again))


def test_run_sequence_accepts_spike_train():
    topo = LayerTopology(2, [2, 2])
    net = SrmNetwork(topo, weights=np.full(topo.num_synapses, 3.0))
    train = SpikeTrain(np.array([[1, 0, 1, 0, 0], [0, 1, 0, 0, 1]]))
    run = run_sequence(net, train)
    raster = run.raster()
    assert raster.num_neurons == 4 and raster.num_steps == 5
    with pytest.raises(DimensionError):
        run_sequence(net, SpikeTrain(np.ones((3, 4), dtype=np.uint8)))


def test_dimension_errors_name_tensor():
    topo = LayerTopology(3, [2, 2])
    net = SrmNetwork(topo)
    state = net.new_state(1)
    with pytest.raises(DimensionError) as info:
        step(net, state, np.zeros(4))
    assert info.value.name == "input_slice"
    with pytest.raises(DimensionError):
        SrmNetwork(topo, weights=np.zeros(3))


def test_binary_network_rejects_real_weights():
    topo = LayerTopology(4, [2, 2])
    net = SrmNetwork(topo, binary=True)
    assert net.thresholds == (2.0, math.sqrt(2))
    state = net.new_state(1)
    step(net, state, np.ones(4))
    bad = topo.split(np.full(topo.num_synapses, 0.5))
    with pytest.raises(ValueError):
        step(net, state, np.ones(4), weights=bad)
    step(net, state, np.ones(4), weights=bad, relaxed=True)


def test_traces_stay_finite():
    rng = np.random.default_rng(0)
    topo = LayerTopology(10, [8, 4])
    net = SrmNetwork(topo, weights=rng.normal(0, 3, topo.num_synapses))
    run = run_sequence(net, np.ones((500, 1, 10)))
    assert all(np.all(np.isfinite(a)) for a in run.membrane + run.pre)
