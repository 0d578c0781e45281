"""Layer-local losses and three-factor gradients (DECOLLE style).

Every layer ``l`` owns a fixed random projection ``B_l`` of shape
``(C, n_l)``.  At each step the layer's spikes are projected, passed through a
softmax and scored against the one-hot target with cross-entropy.  The
closed-form derivative with respect to the spikes gives the per-neuron error
signal, and the weight gradient is ``error * sigma'(u - threshold) * trace``.

The self-feedback term of the membrane is treated as a constant, so no
gradient flows back through time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .srm import LayerTopology


@dataclass
class ReadoutMatrices:
    """Fixed random read-outs, entries i.i.d. uniform on +-1/sqrt(n_l)."""

    matrices: list[np.ndarray]
    seed: int

    @classmethod
    def build(cls, topology: LayerTopology, num_classes: int, seed: int,
              dtype=np.float64) -> "ReadoutMatrices":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB]))
        mats = []
        for n in topology.layer_sizes:
            bound = 1.0 / np.sqrt(n)
            mats.append(rng.uniform(-bound, bound, size=(num_classes, n)).astype(dtype))
        return cls(mats, seed)

    @property
    def num_classes(self) -> int:
        return self.matrices[0].shape[0]

    def __getitem__(self, layer: int) -> np.ndarray:
        return self.matrices[layer]

    def __len__(self) -> int:
        return len(self.matrices)


def local_loss(y_t: np.ndarray, s_t: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cross-entropy of ``softmax(B s)`` against ``y``; batched over leading axes."""
    logits = np.asarray(s_t) @ B.T
    return -np.sum(y_t * log_softmax(logits, axis=-1), axis=-1)


def error_signal(y_t: np.ndarray, s_t: np.ndarray, B: np.ndarray) -> np.ndarray:
    """d local_loss / d s, i.e. ``B^T (softmax(B s) - y)`` per replica."""
    probs = softmax(np.asarray(s_t) @ B.T, axis=-1)
    return (probs - y_t) @ B


def surrogate_derivative(u, threshold):
    """Derivative of the logistic sigmoid at ``u - threshold``."""
    s = expit(np.asarray(u) - threshold)
    return s * (1.0 - s)


def three_factor_grad(error: np.ndarray, membrane: np.ndarray, pre_trace: np.ndarray,
                      threshold: float) -> np.ndarray:
    """Per-synapse gradient ``e_i * sigma'(u_i - th) * trace_j``.

    For one replica the result has shape ``(n_post, n_pre)``; with a leading
    batch axis it is ``(batch, n_post, n_pre)``.
    """
    post = np.asarray(error) * surrogate_derivative(membrane, threshold)
    return post[..., :, None] * np.asarray(pre_trace)[..., None, :]


def postsynaptic_factor(error: np.ndarray, membrane: np.ndarray, threshold: float) -> np.ndarray:
    """Error times surrogate derivative, the post-synaptic half of the rule."""
    return error * surrogate_derivative(membrane, threshold)


def batch_moments(post: np.ndarray, pre: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mini-batch mean of the gradient and of its elementwise square.

    ``post`` is ``(batch, n_post)``, ``pre`` is ``(batch, n_pre)``; the
    per-replica gradients are never materialised.
    """
    b = post.shape[0]
    mean = post.T @ pre
    mean /= b
    sq = np.square(post).T @ np.square(pre)
    sq /= b
    return mean, sq
