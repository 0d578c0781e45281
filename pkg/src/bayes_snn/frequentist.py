"""Frequentist offline learning: online SGD and the straight-through estimator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SpikeDataset
from .local import ReadoutMatrices
from .srm import SrmNetwork
from .training import Learner, LoopOptions, NonFiniteGradient, StepRecord, fit


@dataclass(frozen=True)
class SgdConfig:
    eta: float = 0.01
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def sign(x: np.ndarray) -> np.ndarray:
    """+1 for x >= 0, -1 otherwise."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0).astype(np.result_type(x, np.float32))


def _check_finite(grad):
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))[:5]
        raise NonFiniteGradient(f"non-finite gradient entries at {bad.tolist()}")


def sgd_step(weights: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    """``w - eta * grad``; ``grad`` is either the batch mean or ``(batch, n)``."""
    grad = np.asarray(grad)
    _check_finite(grad)
    if grad.ndim == weights.ndim + 1:
        grad = grad.mean(axis=0)
    return weights - eta * grad


@dataclass
class SteState:
    latent: np.ndarray
    quantized: np.ndarray

    @classmethod
    def from_latent(cls, latent) -> "SteState":
        latent = np.asarray(latent)
        return cls(latent, sign(latent))


def ste_step(state: SteState, grad: np.ndarray, eta: float) -> SteState:
    """SGD on the latent weights, then re-quantise with sign (sign(0) = +1).

    ``grad`` must come from a forward pass that used ``state.quantized``.
    """
    latent = sgd_step(state.latent, grad, eta)
    return SteState(latent, sign(latent))


class SgdLearner(Learner):
    kind = "sgd"

    def __init__(self, weights: np.ndarray, eta: float):
        self.weights = weights
        self.eta = eta

    def step_weights(self, rng):
        return self.weights

    def extra_grad(self) -> np.ndarray | None:
        return None

    def update(self, record: StepRecord) -> None:
        g = record.grad()
        extra = self.extra_grad()
        if extra is not None:
            g = g + extra
        self.weights[...] = sgd_step(self.weights, g, self.eta)

    def predictive_samples(self, n, rng):
        return [self.weights.copy()]

    def arrays(self):
        return {"weights": self.weights}


class SteLearner(Learner):
    kind = "ste"

    def __init__(self, latent: np.ndarray, eta: float):
        self.latent = latent
        self.quantized = sign(latent)
        self.eta = eta

    @property
    def weights(self):
        return self.quantized

    def step_weights(self, rng):
        return self.quantized

    def update(self, record: StepRecord) -> None:
        new = ste_step(SteState(self.latent, self.quantized), record.grad(), self.eta)
        self.latent[...] = new.latent
        self.quantized[...] = new.quantized

    def predictive_samples(self, n, rng):
        return [self.quantized.copy()]

    def arrays(self):
        return {"latent": self.latent}

    def load_arrays(self, arrays):
        np.copyto(self.latent, arrays["latent"])
        self.quantized[...] = sign(self.latent)


def random_init(network: SrmNetwork, seed: int, scale: float = 0.1) -> None:
    """Uniform [-scale, scale] weights, or random signs for a binary network."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1]))
    w = rng.uniform(-scale, scale, size=network.topology.num_synapses)
    network.weights[...] = sign(w) if network.binary else w


def make_learner(network: SrmNetwork, trainer: str, eta: float, seed: int = 0,
                 scale: float = 0.1) -> Learner:
    """SGD works on ``network.weights`` directly; STE latents keep their signs.

    STE latents are ``sign(w) * U(0, scale)``, which is uniform on
    [-scale, scale] when the binary weights are random signs.
    """
    if trainer == "sgd":
        if network.binary:
            raise ValueError("sgd trains real-valued networks; use ste for binary weights")
        return SgdLearner(network.weights, eta)
    if trainer == "ste":
        if not network.binary:
            raise ValueError("ste needs a binary network")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x57]))
        mag = rng.uniform(0, scale, size=network.weights.shape).astype(network.dtype)
        learner = SteLearner(sign(network.weights) * mag, eta)
        network.weights = learner.quantized
        return learner
    raise ValueError(f"unknown trainer {trainer!r}")


def train_offline(network: SrmNetwork, readouts: ReadoutMatrices, dataset: SpikeDataset,
                  config: SgdConfig, trainer: str = "sgd", opts: LoopOptions | None = None):
    """Train point weights with SGD or STE starting from ``network.weights``.

    Returns ``(learner, loss_trace)``; the network's weights are updated in
    place (binary weights for STE).
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    opts = opts or LoopOptions(batch_size=config.batch_size)
    learner = make_learner(network, trainer, config.eta, config.seed)
    trace = fit(learner, network, readouts, dataset, config.epochs, opts, config.seed)
    return learner, trace
