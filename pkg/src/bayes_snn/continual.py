"""Continual learning over task streams.

Learners see only mini-batches; the orchestrator in ``run_task_stream`` knows
the task boundaries and uses them to draw coresets and to capture anchors
(EWC weights and Fisher diagonals, or the previous task's posterior, which
becomes the next task's prior).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bayes import (BernoulliLearner, GaussianLearner, GaussianPosterior, bernoulli_vi_step,
                    gaussian_vi_step, init_gaussian)
from .data import SpikeDataset, TaskStream, concat
from .frequentist import SgdLearner, make_learner, random_init
from .local import ReadoutMatrices, surrogate_derivative
from .metrics import evaluate
from .srm import SrmNetwork
from .training import Learner, LoopOptions, StepRecord, _forward_group, stream, train_epoch

LEARNERS = ("freq_plain", "freq_ewc", "tacos", "bayes_gauss", "bayes_bern")


# -- coresets ----------------------------------------------------------------

def coreset_indices(labels, fraction: float, seed: int, key: int = 0) -> np.ndarray:
    """``ceil(fraction * n_c)`` positions per class, uniform without replacement, sorted."""
    if not 0 < fraction <= 1:
        raise ValueError("coreset fraction must lie in (0, 1]")
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot draw a coreset from an empty task")
    rng = stream(seed, 0xC0, key)
    picks = []
    for c in np.unique(labels):
        pos = np.flatnonzero(labels == c)
        k = math.ceil(fraction * pos.size)
        picks.append(rng.choice(pos, size=k, replace=False))
    return np.sort(np.concatenate(picks))


def draw_coreset(task_dataset: SpikeDataset, fraction: float, seed: int,
                 key: int = 0) -> SpikeDataset:
    return task_dataset.subset(coreset_indices(task_dataset.labels, fraction, seed, key))


@dataclass
class CoresetStore:
    """Retained positions into each finished task's training set."""

    fraction: float
    indices: list[np.ndarray] = field(default_factory=list)

    def add(self, task_dataset: SpikeDataset, seed: int, task: int) -> None:
        if self.fraction > 0:
            self.indices.append(coreset_indices(task_dataset.labels, self.fraction, seed, task))
        else:
            self.indices.append(np.zeros(0, dtype=np.int64))

    def datasets(self, tasks: list[SpikeDataset]) -> list[SpikeDataset]:
        return [t.subset(i) for t, i in zip(tasks, self.indices) if i.size]


# -- EWC ---------------------------------------------------------------------

@dataclass
class FimDiag:
    values: np.ndarray
    task: int

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("Fisher diagonal must be nonnegative")


def per_example_grads(network: SrmNetwork, readouts: ReadoutMatrices, weights: np.ndarray,
                      x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of each example's total loss (summed over steps), ``(B, n_synapses)``."""
    T, batch, _ = x.shape
    state = network.new_state(batch)
    layers = network.topology.split(weights.astype(network.dtype, copy=False))
    out = np.zeros((batch, network.topology.num_synapses), dtype=np.float64)
    views = network.topology.split(out)
    x = x.astype(network.dtype, copy=False)
    y = y.astype(network.dtype, copy=False)
    for t in range(T):
        g = _forward_group(network, readouts, state, x[t], y, layers, False)
        for v, post, pre in zip(views, g.post, g.pre):
            v += post[:, :, None] * pre[:, None, :]
    return out


def fim_diag(network: SrmNetwork, readouts: ReadoutMatrices, weights: np.ndarray,
             dataset: SpikeDataset, task: int = 0, batch: int = 16) -> FimDiag:
    """Sum over examples of squared per-example gradients."""
    F = np.zeros(network.topology.num_synapses, dtype=np.float64)
    for a in range(0, len(dataset), batch):
        idx = np.arange(a, min(a + batch, len(dataset)))
        g = per_example_grads(network, readouts, weights, dataset.encode(idx), dataset.targets(idx))
        F += np.sum(np.square(g), axis=0)
    return FimDiag(F, task)


@dataclass
class EwcAnchor:
    weights: np.ndarray
    fim: FimDiag


def ewc_penalty(w: np.ndarray, anchors: list[EwcAnchor], alpha: float) -> float:
    return float(alpha * sum(np.sum(a.fim.values * np.square(w - a.weights)) for a in anchors))


def ewc_penalty_grad(w: np.ndarray, anchors: list[EwcAnchor], alpha: float) -> np.ndarray:
    """``2 alpha sum_k F_k (w - w_k)``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    g = np.zeros_like(w, dtype=np.float64)
    for a in anchors:
        g += a.fim.values * (w - a.weights)
    return 2.0 * alpha * g


class EwcLearner(SgdLearner):
    """SGD plus the EWC penalty, applied at every online step.

    With ``implicit`` the penalty part of the step is taken in closed form
    (a proximal step), which stays stable however large ``eta * alpha * F``
    gets.  The explicit form is the plain gradient step.
    """

    kind = "freq_ewc"

    def __init__(self, weights: np.ndarray, eta: float, alpha: float, implicit: bool = True):
        super().__init__(weights, eta)
        self.alpha = alpha
        self.implicit = implicit
        self.anchors: list[EwcAnchor] = []

    def extra_grad(self):
        if not self.anchors or self.implicit:
            return None
        return ewc_penalty_grad(self.weights, self.anchors, self.alpha).astype(self.weights.dtype)

    def update(self, record: StepRecord) -> None:
        super().update(record)
        if self.anchors and self.implicit:
            lam = 2.0 * self.eta * self.alpha
            F = sum(a.fim.values for a in self.anchors)
            Fw = sum(a.fim.values * a.weights for a in self.anchors)
            new = (self.weights + lam * Fw) / (1.0 + lam * F)
            self.weights[...] = new.astype(self.weights.dtype)


# -- TACOS -------------------------------------------------------------------

@dataclass(frozen=True)
class TacosConfig:
    gamma: float = 0.05
    kappa: float = 0.01
    delta_nu: float = 0.01
    rate_threshold: float = 0.1
    window: int = 20

    def __post_init__(self):
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        if self.gamma < 0 or self.delta_nu < 0 or self.window < 1:
            raise ValueError("gamma, delta_nu must be >= 0 and window >= 1")


@dataclass
class TacosState:
    """Per-layer plasticity state; ``pre_rate``/``post_rate`` are windowed spike rates."""

    nu: np.ndarray
    w_ref: np.ndarray
    pre_rate: np.ndarray
    post_rate: np.ndarray
    config: TacosConfig = TacosConfig()

    @classmethod
    def zeros_like(cls, w: np.ndarray, config: TacosConfig = TacosConfig()) -> "TacosState":
        n_post, n_pre = w.shape
        return cls(np.zeros_like(w), w.copy(), np.zeros(n_pre), np.zeros(n_post), config)


def tacos_update(state: TacosState, w: np.ndarray, hebb: np.ndarray, s_post: np.ndarray,
                 s_pre: np.ndarray, eta: float, gamma: float) -> tuple[np.ndarray, TacosState]:
    """Core rule from batch-mean factors.

    ``hebb`` is ``mean(e * sigma' (x) s_pre)`` with shape ``(n_post, n_pre)``;
    ``s_post`` and ``s_pre`` are mean spike vectors for this step.
    """
    cfg = state.config
    gate = np.exp(-np.abs(state.nu * w))
    new_w = w - gate * (eta * hebb + gamma * (w - state.w_ref) * s_post[:, None])
    w_ref = state.w_ref + cfg.kappa * (new_w - state.w_ref)
    # Running rates over the configured window, as an exponential average.
    a = 1.0 / cfg.window
    pre_rate = state.pre_rate + a * (s_pre - state.pre_rate)
    post_rate = state.post_rate + a * (s_post - state.post_rate)
    active = (post_rate > cfg.rate_threshold)[:, None] & (pre_rate > cfg.rate_threshold)[None, :]
    nu = state.nu + cfg.delta_nu * active
    return new_w, TacosState(nu, w_ref, pre_rate, post_rate, cfg)


def tacos_step(state: TacosState, w: np.ndarray, e: np.ndarray, s_j: np.ndarray, u: np.ndarray,
               s_i: np.ndarray, eta: float, gamma: float, threshold: float
               ) -> tuple[np.ndarray, TacosState]:
    """One step for one layer; leading batch axes on the neuron vectors are averaged."""
    post = np.asarray(e) * surrogate_derivative(u, threshold)
    s_j = np.asarray(s_j, dtype=np.float64)
    s_i = np.asarray(s_i, dtype=np.float64)
    if post.ndim == 1:
        hebb = np.outer(post, s_j)
        return tacos_update(state, w, hebb, s_i, s_j, eta, gamma)
    hebb = post.T @ s_j / post.shape[0]
    return tacos_update(state, w, hebb, s_i.mean(axis=0), s_j.mean(axis=0), eta, gamma)


class TacosLearner(Learner):
    """Metaplastic, heterosynaptic rule driven by the local error signals.

    ``nu`` and ``w_ref`` are flat arrays in the weight layout; rates restart
    at each input sequence.
    """

    kind = "tacos"

    def __init__(self, network: SrmNetwork, weights: np.ndarray, eta: float,
                 config: TacosConfig = TacosConfig()):
        self.network = network
        self.weights = weights
        self.eta = eta
        self.config = config
        self.nu = np.zeros_like(weights)
        self.w_ref = weights.copy()
        self._rates = None

    def begin_sequence(self, batch):
        self._rates = [(np.zeros(n_pre), np.zeros(n_post))
                       for n_post, n_pre in self.network.topology.layer_shapes]

    def step_weights(self, rng):
        return self.weights

    def update(self, record: StepRecord) -> None:
        topo = self.network.topology
        ws, nus, refs = topo.split(self.weights), topo.split(self.nu), topo.split(self.w_ref)
        n = sum(g.post[0].shape[0] for g in record.groups)
        for layer in range(topo.num_layers):
            hebb = sum(g.post[layer].T @ g.pre_spikes[layer] for g in record.groups) / n
            s_post = record.layer_mean("spikes", layer)
            s_pre = record.layer_mean("pre_spikes", layer)
            pre_r, post_r = self._rates[layer]
            st = TacosState(nus[layer], refs[layer], pre_r, post_r, self.config)
            new_w, st = tacos_update(st, ws[layer], hebb, s_post, s_pre, self.eta,
                                     self.config.gamma)
            ws[layer][...] = new_w
            nus[layer][...] = st.nu
            refs[layer][...] = st.w_ref
            self._rates[layer] = (st.pre_rate, st.post_rate)

    def predictive_samples(self, n, rng):
        return [self.weights.copy()]

    def arrays(self):
        return {"weights": self.weights, "nu": self.nu, "w_ref": self.w_ref}


# -- Bayesian continual ------------------------------------------------------

def bayes_continual_gaussian_step(posterior: GaussianPosterior, anchor: GaussianPosterior,
                                  grad_mean, grad_sq_mean, eta: float, rho: float
                                  ) -> GaussianPosterior:
    """The offline step with the previous task's posterior as the prior."""
    return gaussian_vi_step(posterior, anchor, grad_mean, grad_sq_mean, eta, rho)


def bayes_continual_bernoulli_step(logits, anchor_logits, grad_mean, relaxed, eta: float,
                                   rho: float, tau: float) -> np.ndarray:
    return bernoulli_vi_step(logits, anchor_logits, grad_mean, relaxed, eta, rho, tau)


# -- orchestration -----------------------------------------------------------

@dataclass(frozen=True)
class ContinualConfig:
    learner: str = "bayes_gauss"
    eta: float = 0.01
    rho: float = 1e-3
    tau: float = 1.0
    alpha: float = 1.0
    coreset_fraction: float = 0.075
    epochs_per_task: int = 1
    batch_size: int = 32
    n_samples: int = 10
    mode: str = "committee"
    seed: int = 0
    init_scale: float = 0.1
    prior_mean: float = 0.0
    prior_precision: float = 1.0
    samples_per_step: int = 1
    ewc_implicit: bool = True
    tacos: TacosConfig = TacosConfig()
    workers: int = 1
    replica_group: int | None = None

    def __post_init__(self):
        if self.learner not in LEARNERS:
            raise ValueError(f"learner must be one of {LEARNERS}")
        if not 0 <= self.coreset_fraction <= 1:
            raise ValueError("coreset_fraction must lie in [0, 1]")
        if self.epochs_per_task < 1 or self.batch_size < 1 or self.n_samples < 1:
            raise ValueError("epochs_per_task, batch_size and n_samples must be >= 1")
        if not self.eta > 0 or self.rho < 0 or not self.tau > 0 or self.alpha < 0:
            raise ValueError("need eta > 0, rho >= 0, tau > 0, alpha >= 0")
        if not self.prior_precision > 0:
            raise ValueError("prior_precision must be > 0")


def build_learner(network: SrmNetwork, config: ContinualConfig) -> Learner:
    """Fresh learner for a stream; binary networks accept freq_plain (STE) and bayes_bern."""
    kind, n = config.learner, network.topology.num_synapses
    if network.binary and kind not in ("freq_plain", "bayes_bern"):
        raise ValueError(f"{kind} is defined for real-valued weights only")
    if kind == "bayes_bern" and not network.binary:
        raise ValueError("bayes_bern needs a binary network")
    if kind in ("freq_plain", "freq_ewc", "tacos"):
        random_init(network, config.seed, config.init_scale)
        if kind == "freq_plain":
            return make_learner(network, "ste" if network.binary else "sgd", config.eta,
                                config.seed, config.init_scale)
        if kind == "freq_ewc":
            return EwcLearner(network.weights, config.eta, config.alpha, config.ewc_implicit)
        return TacosLearner(network, network.weights, config.eta, config.tacos)
    if kind == "bayes_gauss":
        post, prior = init_gaussian(n, config.seed, config.prior_precision, config.prior_mean,
                                    config.init_scale, network.dtype)
        return GaussianLearner(post, prior, config.eta, config.rho, config.samples_per_step)
    logits = np.zeros(n, dtype=network.dtype)
    return BernoulliLearner(logits, np.zeros(n, dtype=network.dtype), config.eta, config.rho,
                            config.tau, config.samples_per_step)


def capture_anchor(learner: Learner, network, readouts, task_data: SpikeDataset, task: int):
    """Freeze what the next task regularises towards.  Returns a copy-owned anchor."""
    if isinstance(learner, EwcLearner):
        w = learner.weights.copy()
        learner.anchors.append(EwcAnchor(w, fim_diag(network, readouts, w, task_data, task)))
        return learner.anchors[-1]
    if isinstance(learner, GaussianLearner):
        learner.prior = learner.posterior.copy()
        return learner.prior
    if isinstance(learner, BernoulliLearner):
        learner.prior_logits = learner.logits.copy()
        return learner.prior_logits
    return None


@dataclass
class StreamState:
    """Resumable progress through a task stream."""

    task: int = 0
    epoch: int = 0
    coresets: CoresetStore | None = None
    history: list[dict] = field(default_factory=list)

    @property
    def done_units(self) -> int:
        return len({(r["task"], r["epoch"]) for r in self.history})


def evaluate_tasks(network, readouts, learner, tests: list[SpikeDataset], seen: int,
                   config: ContinualConfig, task: int, epoch: int) -> list[dict]:
    rows = []
    for k, test in enumerate(tests):
        rep = evaluate(network, readouts, learner, test, config.n_samples, config.mode,
                       stream_seed(config.seed, 0xE7))
        rows.append({"task": task, "epoch": epoch, "eval_task": k, "seen": int(k < seen),
                     "accuracy": rep.accuracy, "ece": rep.ece,
                     "mean_confidence": rep.mean_confidence})
    return rows


def stream_seed(seed: int, key: int) -> int:
    return int(stream(seed, key).integers(2 ** 31))


def run_task_stream(stream_: TaskStream, tests: TaskStream | None, network: SrmNetwork,
                    readouts: ReadoutMatrices, config: ContinualConfig,
                    learner: Learner | None = None, state: StreamState | None = None,
                    stop_after: int | None = None, on_unit=None):
    """Train tasks in order and evaluate every test task after each epoch.

    ``state``/``learner`` resume an interrupted run; ``stop_after`` halts after
    that many (task, epoch) units in total, and ``on_unit(learner, state)`` is
    called after each one (checkpointing hook).  Returns ``(learner, state)``.
    """
    if len(stream_) == 0:
        raise ValueError("empty task stream")
    tests = tests if tests is not None else stream_
    learner = learner or build_learner(network, config)
    state = state or StreamState(coresets=CoresetStore(config.coreset_fraction))
    opts = LoopOptions(config.batch_size, replica_group=config.replica_group,
                       workers=config.workers)
    while state.task < len(stream_):
        k = state.task
        replay = state.coresets.datasets(stream_.tasks[:k])
        train = concat([stream_.tasks[k], *replay]) if replay else stream_.tasks[k]
        while state.epoch < config.epochs_per_task:
            if stop_after is not None and state.done_units >= stop_after:
                return learner, state
            e = state.epoch
            train_epoch(learner, network, readouts, train, opts, config.seed, (0x7A5C, k, e))
            state.history += evaluate_tasks(network, readouts, learner, tests.tasks, k + 1,
                                            config, k, e)
            state.epoch += 1
            if state.epoch == config.epochs_per_task:
                capture_anchor(learner, network, readouts, stream_.tasks[k], k)
                state.coresets.add(stream_.tasks[k], config.seed, k)
                state.task += 1
                state.epoch = 0
            if on_unit is not None:
                on_unit(learner, state)
            if state.task != k:
                break
    return learner, state


def final_summary(state: StreamState) -> list[dict]:
    """Rows of the last evaluation, one per task."""
    if not state.history:
        return []
    last = max((r["task"], r["epoch"]) for r in state.history)
    return [r for r in state.history if (r["task"], r["epoch"]) == last]
