"""Mean-field variational learning for SNN weights.

Two posterior families are supported:

* Gaussian ``N(m, diag(1/p))`` over real weights, trained by the natural
  gradient (Bayesian learning rule) update of precision then mean.
* Bernoulli over binary ``{+1, -1}`` weights, parameterised by logits ``w_r``
  with ``P(w = +1) = sigmoid(2 w_r)`` and mean ``tanh(w_r)``.  Gradients with
  respect to the mean are estimated with Gumbel-Softmax relaxed samples
  ``tanh((w_r + delta) / tau)``.

Both learners draw one sample per timestep, shared by all replicas of the
mini-batch.  The Gibbs posterior ``prior * exp(-loss / rho)`` is the
unconstrained optimum of the free energy; its normaliser is intractable and it
is never computed here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import SpikeDataset
from .local import ReadoutMatrices
from .srm import SrmNetwork
from .training import Learner, StepRecord, readout_probs, stream

log = logging.getLogger(__name__)

P_MIN = 1e-6
LOGIT_MAX = 8.0


@dataclass
class GaussianPosterior:
    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.precision.shape:
            raise ValueError("mean and precision differ in shape")

    def validate(self) -> None:
        if not np.all(self.precision > 0):
            raise ValueError("precision must be strictly positive")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.precision))):
            raise ValueError("posterior parameters must be finite")

    def copy(self) -> "GaussianPosterior":
        return GaussianPosterior(self.mean.copy(), self.precision.copy())


# A prior has the same shape; anchors in continual learning are posteriors.
GaussianPrior = GaussianPosterior


@dataclass
class BernoulliPosterior:
    logits: np.ndarray

    @property
    def prob(self) -> np.ndarray:
        return expit(2.0 * self.logits)

    @property
    def mean(self) -> np.ndarray:
        return np.tanh(self.logits)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")

    def copy(self) -> "BernoulliPosterior":
        return BernoulliPosterior(self.logits.copy())


@dataclass(frozen=True)
class ViConfig:
    rho: float = 1e-3
    eta: float = 0.01
    tau: float = 1.0
    batch_size: int = 32
    epochs: int = 1
    samples_per_step: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.samples_per_step < 1:
            raise ValueError("samples_per_step must be >= 1")


# -- divergences --------------------------------------------------------------

def kl_gaussian(q: GaussianPosterior, prior: GaussianPosterior) -> float:
    m, p = q.mean.astype(np.float64), q.precision.astype(np.float64)
    m0, p0 = prior.mean.astype(np.float64), prior.precision.astype(np.float64)
    return float(0.5 * np.sum(p0 / p - 1.0 + np.log(p / p0) + p0 * (m - m0) ** 2))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def kl_bernoulli(q: BernoulliPosterior, prior: BernoulliPosterior) -> float:
    """KL between factorised Bernoullis, computed from logits for stability."""
    a = 2.0 * q.logits.astype(np.float64)
    b = 2.0 * prior.logits.astype(np.float64)
    p = expit(a)
    # p log(p/p0) + (1-p) log((1-p)/(1-p0)), log p = log_sigmoid(logit)
    kl = p * (_log_sigmoid(a) - _log_sigmoid(b)) + (1 - p) * (_log_sigmoid(-a) - _log_sigmoid(-b))
    return float(np.sum(kl))


def free_energy(posterior, prior, mean_train_loss_estimate: float, rho: float) -> float:
    """Monte-Carlo loss estimate plus ``rho`` times the closed-form KL."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    posterior.validate()
    prior.validate()
    if isinstance(posterior, GaussianPosterior):
        kl = kl_gaussian(posterior, prior)
    else:
        kl = kl_bernoulli(posterior, prior)
    return float(mean_train_loss_estimate) + rho * kl


# -- Gaussian ----------------------------------------------------------------

def sample_gaussian(posterior: GaussianPosterior, rng) -> np.ndarray:
    """``m + z / sqrt(p)``; ``rng`` is a Generator or an integer seed."""
    rng = rng if isinstance(rng, np.random.Generator) else stream(rng, 0x6A)
    z = rng.standard_normal(posterior.mean.shape, dtype=posterior.mean.dtype
                            if posterior.mean.dtype in (np.float32, np.float64) else np.float64)
    return posterior.mean + z / np.sqrt(posterior.precision)


def gaussian_vi_step(posterior: GaussianPosterior, prior: GaussianPosterior,
                     grad_mean: np.ndarray, grad_sq_mean: np.ndarray,
                     eta: float, rho: float) -> GaussianPosterior:
    """Precision first, then mean with the updated precision.

    ``grad_mean``/``grad_sq_mean`` are mini-batch means of the gradient and of
    its square, evaluated at weights sampled from ``posterior``.
    """
    p0, m0 = prior.precision, prior.mean
    # (1 - eta rho) p + eta (g2 + rho p0), arranged so p = p0, g = 0 is exactly stationary
    p = posterior.precision + eta * (grad_sq_mean - rho * (posterior.precision - p0))
    low = p < P_MIN
    if np.any(low):
        log.warning("precision fell below %g on %d synapses; clamping", P_MIN, int(low.sum()))
        p = np.where(low, P_MIN, p)
    m = posterior.mean - eta / p * (grad_mean - rho * p0 * (m0 - posterior.mean))
    return GaussianPosterior(m.astype(posterior.mean.dtype, copy=False),
                             p.astype(posterior.precision.dtype, copy=False))


def batch_moments(batch_grads: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and mean-square over the leading (replica) axis."""
    g = np.asarray(batch_grads)
    return g.mean(axis=0), np.square(g).mean(axis=0)


# -- Bernoulli ---------------------------------------------------------------

def gumbel_noise(shape, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """``0.5 * log(eps / (1 - eps))`` with ``eps ~ U(0, 1)``, i.e. logistic noise of scale 1/2."""
    eps = rng.random(shape)
    # eps == 0 has probability 2^-53; map it to the smallest positive draw.
    eps = np.clip(eps, np.finfo(np.float64).tiny, None)
    return (0.5 * (np.log(eps) - np.log1p(-eps))).astype(dtype)


def gs_sample(logits: np.ndarray, tau: float, rng) -> np.ndarray:
    """Relaxed binary weights ``tanh((w_r + delta) / tau)``."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    rng = rng if isinstance(rng, np.random.Generator) else stream(rng, 0x65)
    delta = gumbel_noise(logits.shape, rng, logits.dtype)
    return np.tanh((logits + delta) / tau)


def sample_bernoulli(posterior: BernoulliPosterior, rng) -> np.ndarray:
    """Exact ``{+1, -1}`` sample with ``P(+1) = sigmoid(2 w_r)``."""
    rng = rng if isinstance(rng, np.random.Generator) else stream(rng, 0x6B)
    u = rng.random(posterior.logits.shape)
    return np.where(u < posterior.prob, 1.0, -1.0).astype(posterior.logits.dtype)


def gs_scale(relaxed: np.ndarray, logits: np.ndarray, tau: float) -> np.ndarray:
    """Chain-rule factor ``(1 - w^2) / (tau (1 - tanh^2 w_r))`` from relaxed weight to mean."""
    return (1.0 - np.square(relaxed)) / (tau * (1.0 - np.square(np.tanh(logits))))


def clamp_logits(logits: np.ndarray) -> np.ndarray:
    over = np.abs(logits) > LOGIT_MAX
    if np.any(over):
        log.warning("|logit| exceeded %g on %d synapses; clamping", LOGIT_MAX, int(over.sum()))
        return np.clip(logits, -LOGIT_MAX, LOGIT_MAX)
    return logits


def bernoulli_vi_step(logits: np.ndarray, prior_logits: np.ndarray, grad_mean: np.ndarray,
                      relaxed: np.ndarray, eta: float, rho: float, tau: float) -> np.ndarray:
    """Natural-gradient step on the logits.

    ``grad_mean`` is the mini-batch mean gradient at the relaxed weights
    ``relaxed`` drawn by ``gs_sample`` from ``logits``.  Stacked ``(S, n)``
    inputs average the estimate over ``S`` relaxed samples.
    """
    logits = clamp_logits(logits)
    mu_grad = gs_scale(relaxed, logits, tau) * grad_mean
    if mu_grad.ndim > logits.ndim:
        mu_grad = mu_grad.mean(axis=0)
    # (1 - eta rho) w_r - eta (mu_grad - rho w_r0), exactly stationary at the prior
    new = logits - eta * (mu_grad + rho * (logits - prior_logits))
    return clamp_logits(new).astype(logits.dtype, copy=False)


# -- learners ----------------------------------------------------------------

class GaussianLearner(Learner):
    kind = "bayes_gauss"
    bayesian = True

    def __init__(self, posterior: GaussianPosterior, prior: GaussianPosterior,
                 eta: float, rho: float, samples_per_step: int = 1):
        self.mean = posterior.mean
        self.precision = posterior.precision
        self.prior = prior
        self.eta = eta
        self.rho = rho
        self.samples_per_step = samples_per_step

    @property
    def posterior(self) -> GaussianPosterior:
        return GaussianPosterior(self.mean, self.precision)

    def step_weights(self, rng):
        if self.samples_per_step == 1:
            return sample_gaussian(self.posterior, rng)
        return [sample_gaussian(self.posterior, rng) for _ in range(self.samples_per_step)]

    def update(self, record: StepRecord) -> None:
        g, g2 = record.grad(), record.grad_sq()
        new = gaussian_vi_step(self.posterior, self.prior, g, g2, self.eta, self.rho)
        self.mean[...] = new.mean
        self.precision[...] = new.precision

    def predictive_samples(self, n, rng):
        return [sample_gaussian(self.posterior, rng) for _ in range(n)]

    def arrays(self):
        return {"mean": self.mean, "precision": self.precision}


class BernoulliLearner(Learner):
    kind = "bayes_bern"
    bayesian = True
    relaxed = True

    def __init__(self, logits: np.ndarray, prior_logits: np.ndarray, eta: float, rho: float,
                 tau: float, samples_per_step: int = 1):
        self.logits = logits
        self.prior_logits = prior_logits
        self.eta = eta
        self.rho = rho
        self.tau = tau
        self.samples_per_step = samples_per_step

    @property
    def posterior(self) -> BernoulliPosterior:
        return BernoulliPosterior(self.logits)

    def step_weights(self, rng):
        if self.samples_per_step == 1:
            return gs_sample(self.logits, self.tau, rng)
        return [gs_sample(self.logits, self.tau, rng) for _ in range(self.samples_per_step)]

    def update(self, record: StepRecord) -> None:
        if record.num_samples == 1:
            g, w = record.grad(), record.weights[0]
        else:
            g = np.stack([record.grad(k) for k in range(record.num_samples)])
            w = np.stack(record.weights)
        self.logits[...] = bernoulli_vi_step(self.logits, self.prior_logits, g, w,
                                             self.eta, self.rho, self.tau)

    def predictive_samples(self, n, rng):
        return [sample_bernoulli(self.posterior, rng) for _ in range(n)]

    def arrays(self):
        return {"logits": self.logits}


def init_gaussian(n: int, seed: int, prior_precision: float = 1.0, prior_mean: float = 0.0,
                  scale: float = 0.1, dtype=np.float64):
    """Mean uniform on [-scale, scale], precision at the prior value."""
    rng = stream(seed, 0x61)
    post = GaussianPosterior(rng.uniform(-scale, scale, n).astype(dtype),
                             np.full(n, prior_precision, dtype=dtype))
    prior = GaussianPosterior(np.full(n, prior_mean, dtype=dtype),
                              np.full(n, prior_precision, dtype=dtype))
    return post, prior


# -- prediction --------------------------------------------------------------

def draw_samples(learner: Learner, n_samples: int, seed: int, key: int = 0) -> list[np.ndarray]:
    if not learner.bayesian:
        if n_samples != 1:
            raise ValueError("a frequentist model has a single weight vector; use N_S = 1")
    return learner.predictive_samples(n_samples, stream(seed, 0x9E, key))


def predict(network: SrmNetwork, readouts: ReadoutMatrices, learner: Learner,
            dataset: SpikeDataset, mode: str = "committee", n_samples: int = 10,
            seed: int = 0, indices=None, samples: list[np.ndarray] | None = None,
            time_resolved: bool = False):
    """Class probabilities averaged over samples and time steps.

    Committee mode draws ``n_samples`` weight vectors once and reuses them for
    every input; ensemble mode draws a fresh set per input (input ``i`` uses
    stream key ``i``, so input 0 sees the committee's draws).  Returns
    ``(N, C)`` probabilities, or ``(T, N, C)`` running prefix averages when
    ``time_resolved``.
    """
    if n_samples < 1:
        raise ValueError("N_S must be >= 1")
    if mode not in ("committee", "ensemble"):
        raise ValueError(f"unknown mode {mode!r}")
    idx = np.arange(len(dataset)) if indices is None else np.asarray(indices)
    x = dataset.encode(idx)
    T = x.shape[0]
    if mode == "committee":
        ws = samples if samples is not None else draw_samples(learner, n_samples, seed)
        acc = sum(readout_probs(network, readouts, x, w) for w in ws) / len(ws)
    else:
        acc = np.empty((T, len(idx), readouts.num_classes))
        for i in range(len(idx)):
            ws = draw_samples(learner, n_samples, seed, i)
            acc[:, i] = sum(readout_probs(network, readouts, x[:, i:i + 1], w)[:, 0]
                            for w in ws) / len(ws)
    if time_resolved:
        return np.cumsum(acc, axis=0) / np.arange(1, T + 1)[:, None, None]
    return acc.mean(axis=0)


def hard_predict(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Arg-max class (lowest index on ties) and its probability."""
    probs = np.asarray(probs)
    cls = np.argmax(probs, axis=-1)
    return cls, np.take_along_axis(probs, cls[..., None], axis=-1)[..., 0]
