"""Online training loop shared by every learner.

A mini-batch is simulated as ``B`` replicas advanced in lockstep.  At every
timestep the learner supplies the weights for the forward step (point
weights, a posterior sample, relaxed binary weights), the local error signals
are formed per layer, and the learner applies its update from the resulting
``StepRecord`` before the next step.

Replicas can be split into fixed-size groups and stepped on a thread pool.
Gradient reductions always sum the groups in index order, so the result does
not depend on the number of workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .data import SpikeDataset
from .local import ReadoutMatrices, surrogate_derivative
from .srm import SrmNetwork, step


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-style RNG stream: independent generator per (seed, key...)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class LayerSlice:
    """Per-layer quantities of one replica group at one timestep."""

    post: list[np.ndarray]        # error * sigma'(u - th), (b, n_l)
    pre: list[np.ndarray]         # filtered pre-synaptic traces, (b, n_{l-1})
    pre_spikes: list[np.ndarray]  # source spikes, (b, n_{l-1})
    spikes: list[np.ndarray]      # layer spikes, (b, n_l)
    loss: float                   # summed local loss over the group
    sample: int = 0               # index of the weight sample that drove it


@dataclass
class StepRecord:
    """Everything a learner may need from one timestep.

    ``weights`` holds one flat vector per weight sample used at this step
    (usually one); ``batch`` counts replicas per sample.
    """

    network: SrmNetwork
    groups: list[LayerSlice]
    batch: int
    weights: list[np.ndarray]
    t: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_samples(self) -> int:
        return len(self.weights)

    def _reduce(self, key, fn, sample):
        ck = (key, sample)
        if ck not in self._cache:
            out = np.zeros(self.network.topology.num_synapses, dtype=self.weights[0].dtype)
            views = self.network.topology.split(out)
            count = 0
            for g in self.groups:
                if sample is not None and g.sample != sample:
                    continue
                count += g.post[0].shape[0]
                for layer, v in enumerate(views):
                    v += fn(g, layer)
            out /= count
            if not np.all(np.isfinite(out)):
                bad = np.flatnonzero(~np.isfinite(out))[:5]
                raise NonFiniteGradient(f"non-finite gradient at t={self.t}, synapses {bad.tolist()}")
            self._cache[ck] = out
        return self._cache[ck]

    def grad(self, sample: int | None = None) -> np.ndarray:
        """Mean three-factor gradient over replicas (of one sample, or all)."""
        return self._reduce("g", lambda g, l: g.post[l].T @ g.pre[l], sample)

    def grad_sq(self, sample: int | None = None) -> np.ndarray:
        """Mean of the squared per-replica gradient."""
        return self._reduce("g2", lambda g, l: np.square(g.post[l]).T @ np.square(g.pre[l]),
                            sample)

    def layer_mean(self, attr: str, layer: int) -> np.ndarray:
        n = sum(g.post[0].shape[0] for g in self.groups)
        return sum(getattr(g, attr)[layer].sum(axis=0) for g in self.groups) / n

    @property
    def loss(self) -> float:
        return sum(g.loss for g in self.groups) / (self.batch * self.num_samples)


class Learner:
    """Interface every trainer implements.

    ``relaxed`` marks forwards that use non-binary weights on a binary
    network.
    """

    kind = "base"
    relaxed = False
    bayesian = False

    def step_weights(self, rng: np.random.Generator) -> np.ndarray | list[np.ndarray]:
        """Weights for the next forward step; a list means several MC samples."""
        raise NotImplementedError

    def update(self, record: StepRecord) -> None:
        raise NotImplementedError

    def predictive_samples(self, n: int, rng: np.random.Generator) -> list[np.ndarray]:
        raise NotImplementedError

    def arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            np.copyto(getattr(self, k), v)

    def begin_sequence(self, batch: int) -> None:
        """Called before each mini-batch sequence."""


@dataclass
class LoopOptions:
    batch_size: int = 32
    sample_per_sequence: bool = False
    replica_group: int | None = None
    workers: int = 1


def _groups(batch: int, size: int | None) -> list[slice]:
    size = batch if not size else size
    return [slice(a, min(a + size, batch)) for a in range(0, batch, size)]


def _forward_group(network, readouts, state, x_t, y, weights, relaxed, sample=0) -> LayerSlice:
    sources = [x_t]
    step(network, state, x_t, weights=weights, check=False, relaxed=relaxed)
    post, pre, loss = [], [], 0.0
    for layer in range(network.topology.num_layers):
        s = state.spikes[layer]
        B = readouts[layer]
        logits = s @ B.T
        probs = softmax(logits, axis=-1)
        loss -= float(np.sum(y * log_softmax(logits, axis=-1)))
        err = (probs - y) @ B
        post.append(err * surrogate_derivative(state.membrane[layer], network.thresholds[layer]))
        pre.append(state.pre[layer].copy())
        sources.append(s)
    return LayerSlice(post, pre, sources[:-1], list(state.spikes), loss, sample)


def train_sequence(learner: Learner, network: SrmNetwork, readouts: ReadoutMatrices,
                   x: np.ndarray, y: np.ndarray, rng: np.random.Generator,
                   opts: LoopOptions, pool: ThreadPoolExecutor | None = None) -> float:
    """Run one mini-batch sequence with online updates; returns mean loss per step."""
    T, batch, _ = x.shape
    x = x.astype(network.dtype, copy=False)
    y = y.astype(network.dtype, copy=False)
    slices = _groups(batch, opts.replica_group)
    states: list[list] = []
    learner.begin_sequence(batch)
    total = 0.0
    ws = None
    for t in range(T):
        if ws is None or not opts.sample_per_sequence:
            ws = learner.step_weights(rng)
            if not isinstance(ws, list):
                ws = [ws]
        while len(states) < len(ws):
            states.append([network.new_state(sl.stop - sl.start) for sl in slices])
        jobs = []
        for k, w in enumerate(ws):
            layers = network.topology.split(w)
            jobs += [(k, (network, readouts, st, x[t, sl], y[sl], layers, learner.relaxed))
                     for st, sl in zip(states[k], slices)]
        run = lambda job: _forward_group(*job[1], sample=job[0])  # noqa: E731
        if pool is not None and len(jobs) > 1:
            groups = list(pool.map(run, jobs))
        else:
            groups = [run(j) for j in jobs]
        rec = StepRecord(network, groups, batch, ws, t)
        learner.update(rec)
        total += rec.loss
    return total / T


def batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for a in range(0, n, batch_size):
        yield order[a:a + batch_size]


def train_epoch(learner: Learner, network: SrmNetwork, readouts: ReadoutMatrices,
                dataset: SpikeDataset, opts: LoopOptions, seed: int, key: tuple = ()) -> float:
    """One pass over ``dataset``; returns the mean per-step training loss."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    order_rng = stream(seed, 0x0D, *key)
    sample_rng = stream(seed, 0x5A, *key)
    losses, weights = [], []
    pool = ThreadPoolExecutor(opts.workers) if opts.workers > 1 else None
    try:
        for idx in batches(len(dataset), opts.batch_size, order_rng):
            x = dataset.encode(idx)
            y = dataset.targets(idx)
            losses.append(train_sequence(learner, network, readouts, x, y, sample_rng, opts, pool))
            weights.append(len(idx))
    finally:
        if pool is not None:
            pool.shutdown()
    return float(np.average(losses, weights=weights))


def fit(learner: Learner, network: SrmNetwork, readouts: ReadoutMatrices,
        dataset: SpikeDataset, epochs: int, opts: LoopOptions, seed: int,
        key: tuple = ()) -> list[float]:
    """Train for ``epochs`` passes; the loss trace has one entry per epoch."""
    return [train_epoch(learner, network, readouts, dataset, opts, seed, key + (e,))
            for e in range(epochs)]


# -- inference ---------------------------------------------------------------

def readout_probs(network: SrmNetwork, readouts: ReadoutMatrices, x: np.ndarray,
                  weights: np.ndarray, eval_batch: int = 256) -> np.ndarray:
    """Per-step softmax of the projected read-out spikes, shape ``(T, N, C)``."""
    T, n, _ = x.shape
    layers = network.topology.split(weights.astype(network.dtype, copy=False))
    B = readouts[-1]
    out = np.empty((T, n, B.shape[0]))
    for a in range(0, n, eval_batch):
        sl = slice(a, min(a + eval_batch, n))
        state = network.new_state(sl.stop - sl.start)
        xb = x[:, sl].astype(network.dtype, copy=False)
        for t in range(T):
            s = step(network, state, xb[t], weights=layers, check=(t == 0))
            out[t, sl] = softmax(s @ B.T, axis=-1)
    return out
