"""Discrete-time Spike Response Model (SRM) simulator.

The membrane potential of neuron ``i`` at step ``t`` is

    u[i, t] = sum_j w[i, j] * (alpha * s_j)[t] - (beta * s_i)[t]

with the causal convolution ``(f * g)[t] = sum_{d > 0} f[d] g[t - d]``.  The
kernels are sums of decaying exponentials, so every filtered trace is carried
by a first-order recursion instead of a spike history.

Weights of a layered network are stored as one flat vector, layer-major, and
inside a layer as a ``(n_post, n_pre)`` matrix in C order (post-neuron-major,
pre-neuron-minor).  ``SrmNetwork.layer_weights`` returns views into that
vector.

State arrays carry a leading replica axis, so a mini-batch is simulated as
``B`` independent copies advanced in lockstep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit as sigmoid


class DimensionError(ValueError):
    """A tensor handed to the simulator has the wrong shape."""

    def __init__(self, name: str, expected, got):
        self.name = name
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(f"{name}: expected shape {self.expected}, got {self.got}")


ALPHA = "alpha_function"
SINGLE_EXP = "single_exponential"


@dataclass(frozen=True)
class KernelConfig:
    """Synaptic (alpha) and somatic (beta) spike responses, in timesteps.

    ``ref_gain`` scales the self-feedback term; 0 disables it.
    """

    tau_mem: float = 10.0
    tau_syn: float = 5.0
    tau_ref: float = 5.0
    kernel_kind: str = ALPHA
    ref_gain: float = 1.0

    def __post_init__(self):
        for name in ("tau_mem", "tau_syn", "tau_ref"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.kernel_kind not in (ALPHA, SINGLE_EXP):
            raise ValueError(f"unknown kernel_kind {self.kernel_kind!r}")
        if self.kernel_kind == ALPHA and self.tau_mem == self.tau_syn:
            raise ValueError("alpha_function kernel needs tau_mem != tau_syn")
        if self.ref_gain < 0:
            raise ValueError("ref_gain must be >= 0")

    @property
    def decay_mem(self) -> float:
        return math.exp(-1.0 / self.tau_mem)

    @property
    def decay_syn(self) -> float:
        return math.exp(-1.0 / self.tau_syn)

    @property
    def decay_ref(self) -> float:
        return math.exp(-1.0 / self.tau_ref)


def kernel_values(config: KernelConfig, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(alpha, beta)`` evaluated at ``t = 1..horizon``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    t = np.arange(1, horizon + 1, dtype=np.float64)
    if config.kernel_kind == ALPHA:
        alpha = np.exp(-t / config.tau_mem) - np.exp(-t / config.tau_syn)
    else:
        alpha = np.exp(-t / config.tau_syn)
    beta = config.ref_gain * np.exp(-t / config.tau_ref)
    return alpha, beta


@dataclass(frozen=True)
class LayerTopology:
    """Feedforward stack; the last entry of ``layer_sizes`` is the read-out."""

    input_size: int
    layer_sizes: tuple[int, ...]
    feedforward_only: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least one hidden layer and one read-out layer")
        if self.input_size < 1 or min(self.layer_sizes) < 1:
            raise ValueError("all layer sizes must be positive")
        if not self.feedforward_only:
            raise NotImplementedError("recurrent connections are not supported")

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def fan_in(self) -> tuple[int, ...]:
        return (self.input_size,) + self.layer_sizes[:-1]

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.layer_sizes, self.fan_in))

    @property
    def offsets(self) -> list[int]:
        out = [0]
        for n_post, n_pre in self.layer_shapes:
            out.append(out[-1] + n_post * n_pre)
        return out

    @property
    def num_synapses(self) -> int:
        return self.offsets[-1]

    @property
    def num_neurons(self) -> int:
        return sum(self.layer_sizes)

    def split(self, flat: np.ndarray) -> list[np.ndarray]:
        """Per-layer ``(n_post, n_pre)`` views of a flat synapse vector."""
        flat = np.asarray(flat)
        if flat.shape[-1] != self.num_synapses:
            raise DimensionError("weights", (self.num_synapses,), flat.shape)
        offs = self.offsets
        lead = flat.shape[:-1]
        return [flat[..., a:b].reshape(lead + shape)
                for (a, b), shape in zip(zip(offs[:-1], offs[1:]), self.layer_shapes)]


@dataclass
class SpikeTrain:
    """Binary raster stored as ``(num_neurons, num_steps)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or 0 in data.shape:
            raise ValueError(f"spike raster must be a non-empty 2-d array, got {data.shape}")
        if not np.isin(data, (0, 1)).all():
            raise ValueError("spike raster entries must be 0 or 1")
        self.data = data.astype(np.uint8, copy=False)

    @property
    def num_neurons(self) -> int:
        return self.data.shape[0]

    @property
    def num_steps(self) -> int:
        return self.data.shape[1]


@dataclass
class SrmState:
    """Per-replica dynamic state.

    ``trace_mem``/``trace_syn`` hold the two exponential components of the
    pre-synaptic trace for each layer's source population (shared by all of a
    source's outgoing synapses); their difference (or ``trace_syn`` alone for
    the single-exponential kernel) is the value ``(alpha * s_j)[t]`` used at the
    current step.  ``pre``/``membrane``/``spikes`` record the last step.
    """

    trace_mem: list[np.ndarray]
    trace_syn: list[np.ndarray]
    refr: list[np.ndarray]
    pre: list[np.ndarray]
    membrane: list[np.ndarray]
    spikes: list[np.ndarray]
    t: int = 0

    @property
    def batch(self) -> int:
        return self.refr[0].shape[0]

    def reset(self) -> None:
        for group in (self.trace_mem, self.trace_syn, self.refr, self.pre,
                      self.membrane, self.spikes):
            for a in group:
                a.fill(0)
        self.t = 0


@dataclass
class SrmNetwork:
    """Static parameters of a layered SRM network.

    ``thresholds`` may be a scalar or one value per layer; ``None`` picks 1.0
    for real-valued weights and ``sqrt(fan_in)`` per layer for binary ones.
    With ``soft_spikes`` the emitted value is ``sigmoid(u - threshold)`` instead
    of the hard step (used only to build differentiable test networks).
    """

    topology: LayerTopology
    kernel: KernelConfig = field(default_factory=KernelConfig)
    weights: np.ndarray | None = None
    binary: bool = False
    thresholds: float | Sequence[float] | None = None
    soft_spikes: bool = False
    dtype: type = np.float64

    def __post_init__(self):
        n = self.topology.num_synapses
        if self.weights is None:
            self.weights = (np.ones if self.binary else np.zeros)(n, dtype=self.dtype)
        w = np.asarray(self.weights, dtype=self.dtype)
        if w.shape != (n,):
            raise DimensionError("weights", (n,), w.shape)
        self.weights = w
        if self.thresholds is None:
            if self.binary:
                th = [math.sqrt(f) for f in self.topology.fan_in]
            else:
                th = [1.0] * self.topology.num_layers
        elif np.ndim(self.thresholds) == 0:
            th = [float(self.thresholds)] * self.topology.num_layers
        else:
            th = [float(x) for x in self.thresholds]
            if len(th) != self.topology.num_layers:
                raise DimensionError("thresholds", (self.topology.num_layers,), (len(th),))
        self.thresholds = tuple(th)

    def layer_weights(self, flat: np.ndarray | None = None) -> list[np.ndarray]:
        return self.topology.split(self.weights if flat is None else flat)

    def new_state(self, batch: int = 1) -> SrmState:
        top = self.topology
        zeros = lambda m: np.zeros((batch, m), dtype=self.dtype)  # noqa: E731
        return SrmState(
            trace_mem=[zeros(m) for m in top.fan_in],
            trace_syn=[zeros(m) for m in top.fan_in],
            refr=[zeros(m) for m in top.layer_sizes],
            pre=[zeros(m) for m in top.fan_in],
            membrane=[zeros(m) for m in top.layer_sizes],
            spikes=[zeros(m) for m in top.layer_sizes],
        )

    def check_binary(self, flat: np.ndarray) -> None:
        if not np.all(np.abs(flat) == 1):
            raise ValueError("binary network received weights outside {+1, -1}")


def _check_state(network: SrmNetwork, state: SrmState) -> None:
    top = network.topology
    for name, group, sizes in (("trace_syn", state.trace_syn, top.fan_in),
                               ("refr", state.refr, top.layer_sizes)):
        if len(group) != top.num_layers:
            raise DimensionError(f"state.{name}", (top.num_layers,), (len(group),))
        for layer, (a, m) in enumerate(zip(group, sizes)):
            if a.ndim != 2 or a.shape[1] != m:
                raise DimensionError(f"state.{name}[{layer}]", (state.batch, m), a.shape)


def step(network: SrmNetwork, state: SrmState, input_slice: np.ndarray,
         weights: Sequence[np.ndarray] | None = None, check: bool = True,
         relaxed: bool = False) -> np.ndarray:
    """Advance ``state`` by one timestep in place and return read-out spikes.

    ``input_slice`` has shape ``(input_size,)`` or ``(batch, input_size)``.
    ``weights`` optionally overrides the network's point weights with
    per-layer matrices (a posterior sample, relaxed binary weights, ...).
    All layer spikes are left in ``state.spikes``.  A binary network rejects
    weights outside {+1, -1} unless ``relaxed`` (Gumbel-Softmax forward).
    """
    top = network.topology
    x = np.asarray(input_slice)
    if x.ndim == 1:
        x = x[None, :]
    if check:
        if x.shape != (state.batch, top.input_size):
            raise DimensionError("input_slice", (state.batch, top.input_size), x.shape)
        _check_state(network, state)
    if weights is None:
        weights = network.layer_weights()
    if check and network.binary and not relaxed:
        for w in weights:
            network.check_binary(w)
    k = network.kernel
    alpha_kernel = k.kernel_kind == ALPHA
    dm, ds, dr = k.decay_mem, k.decay_syn, k.decay_ref
    sources = [x]
    for layer, w in enumerate(weights):
        if alpha_kernel:
            np.subtract(state.trace_mem[layer], state.trace_syn[layer], out=state.pre[layer])
        else:
            state.pre[layer][...] = state.trace_syn[layer]
        u = state.pre[layer] @ w.T
        if k.ref_gain:
            u -= k.ref_gain * state.refr[layer]
        state.membrane[layer] = u
        th = network.thresholds[layer]
        if network.soft_spikes:
            s = sigmoid(u - th)
        else:
            s = (u >= th).astype(network.dtype)
        state.spikes[layer] = s
        sources.append(s)
    # Advance traces so they equal sum_{d>0} kernel[d] * s[t + 1 - d] next step.
    for layer in range(top.num_layers):
        src = sources[layer]
        if alpha_kernel:
            tm = state.trace_mem[layer]
            tm += src
            tm *= dm
        ts = state.trace_syn[layer]
        ts += src
        ts *= ds
        r = state.refr[layer]
        r += state.spikes[layer]
        r *= dr
    state.t += 1
    return state.spikes[-1]


@dataclass
class SequenceRun:
    """Logs of a full forward pass, layer-indexed lists of ``(T, batch, n)``."""

    spikes: list[np.ndarray]
    membrane: list[np.ndarray]
    pre: list[np.ndarray]

    @property
    def readout(self) -> np.ndarray:
        return self.spikes[-1]

    def raster(self, replica: int = 0) -> SpikeTrain:
        """All-neuron raster of one replica as a ``SpikeTrain``."""
        stacked = np.concatenate([s[:, replica, :] for s in self.spikes], axis=1)
        return SpikeTrain(stacked.T.round().astype(np.uint8))


def run_sequence(network: SrmNetwork, inputs, weights: Sequence[np.ndarray] | None = None,
                 relaxed: bool = False) -> SequenceRun:
    """Run ``T`` steps from a reset state.

    ``inputs`` is a ``SpikeTrain`` (one replica) or an array ``(T, batch,
    input_size)``.
    """
    if isinstance(inputs, SpikeTrain):
        if inputs.num_neurons != network.topology.input_size:
            raise DimensionError("input", (network.topology.input_size, inputs.num_steps),
                                 inputs.data.shape)
        x = inputs.data.T[:, None, :]
    else:
        x = np.asarray(inputs)
        if x.ndim == 2:
            x = x[:, None, :]
    T, batch, _ = x.shape
    state = network.new_state(batch)
    top = network.topology
    log_s = [np.empty((T, batch, m), network.dtype) for m in top.layer_sizes]
    log_u = [np.empty((T, batch, m), network.dtype) for m in top.layer_sizes]
    log_pre = [np.empty((T, batch, m), network.dtype) for m in top.fan_in]
    for t in range(T):
        step(network, state, x[t], weights=weights, check=(t == 0), relaxed=relaxed)
        for layer in range(top.num_layers):
            log_s[layer][t] = state.spikes[layer]
            log_u[layer][t] = state.membrane[layer]
            log_pre[layer][t] = state.pre[layer]
    return SequenceRun(log_s, log_u, log_pre)
