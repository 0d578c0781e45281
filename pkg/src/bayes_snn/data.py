"""Datasets, spike encoders, MNIST IDX files and task streams."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .srm import SpikeTrain

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
DEFAULT_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9))


def example_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per example so encodings do not depend on batching."""
    return np.random.default_rng(np.random.SeedSequence([seed, 0xE, index]))


# -- two moons ---------------------------------------------------------------

def moon_point(theta, label) -> np.ndarray:
    """Noise-free point on the upper (label 0) or lower (label 1) moon."""
    theta = np.asarray(theta, dtype=np.float64)
    label = np.asarray(label)
    x = np.where(label == 0, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(label == 0, np.sin(theta), 0.5 - np.sin(theta))
    return np.stack([x, y], axis=-1)


def gen_two_moons(n_per_class: int, noise_sigma: float, seed: int
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Two interleaving half circles with isotropic Gaussian noise.

    Returns ``(points, labels)`` with class 0 first.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x2]))
    labels = np.repeat([0, 1], n_per_class)
    theta = rng.uniform(0.0, math.pi, size=2 * n_per_class)
    points = moon_point(theta, labels) + noise_sigma * rng.standard_normal((2 * n_per_class, 2))
    return points, labels


# -- encoders ----------------------------------------------------------------

@dataclass(frozen=True)
class PopulationCode:
    """Gaussian receptive fields, ``neurons_per_dim`` centers per dimension."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    neurons_per_dim: int = 10
    r_max: float = 0.9
    width: float | None = None

    def __post_init__(self):
        if self.neurons_per_dim < 2:
            raise ValueError("neurons_per_dim must be >= 2")
        if self.width is not None and self.width <= 0:
            raise ValueError("width must be > 0")
        if not 0 <= self.r_max <= 1:
            raise ValueError("r_max must lie in [0, 1]")

    @classmethod
    def fit(cls, points: np.ndarray, neurons_per_dim: int = 10, **kw) -> "PopulationCode":
        points = np.asarray(points, dtype=np.float64)
        return cls(tuple(points.min(axis=0)), tuple(points.max(axis=0)), neurons_per_dim, **kw)

    @property
    def centers(self) -> np.ndarray:
        return np.stack([np.linspace(a, b, self.neurons_per_dim)
                         for a, b in zip(self.lo, self.hi)])

    @property
    def widths(self) -> np.ndarray:
        if self.width is not None:
            return np.full(len(self.lo), self.width)
        span = np.asarray(self.hi) - np.asarray(self.lo)
        return np.where(span > 0, span, 1.0) / (self.neurons_per_dim - 1)

    def rates(self, points: np.ndarray) -> np.ndarray:
        """Firing probability per channel, channels ordered dimension-major."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        diff = points[:, :, None] - self.centers[None]
        r = self.r_max * np.exp(-diff ** 2 / (2 * self.widths[None, :, None] ** 2))
        return r.reshape(points.shape[0], -1)

    @property
    def num_channels(self) -> int:
        return len(self.lo) * self.neurons_per_dim


def population_encode(point, neurons_per_dim: int, T: int, centers_span, width: float,
                      seed: int, r_max: float = 0.9) -> SpikeTrain:
    """Encode one point as ``d * neurons_per_dim`` Bernoulli channels over ``T`` steps.

    ``centers_span`` is ``(lo, hi)``, either scalars or per-dimension sequences.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if width is None or width <= 0:
        raise ValueError("width must be > 0")
    point = np.atleast_1d(np.asarray(point, dtype=np.float64))
    lo, hi = (np.broadcast_to(np.asarray(v, dtype=np.float64), point.shape) for v in centers_span)
    code = PopulationCode(tuple(lo), tuple(hi), neurons_per_dim, r_max, width)
    rates = code.rates(point)[0]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE]))
    return SpikeTrain((rng.random((T, rates.size)) < rates).T.astype(np.uint8))


def rate_encode(image, T: int, seed: int) -> SpikeTrain:
    """Each pixel fires i.i.d. Bernoulli(pixel) per step; channels are flattened pixels."""
    p = np.asarray(image, dtype=np.float64).ravel()
    if T < 1:
        raise ValueError("T must be >= 1")
    if p.size == 0 or p.min() < 0 or p.max() > 1:
        raise ValueError("pixel values must lie in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE]))
    return SpikeTrain((rng.random((T, p.size)) < p).T.astype(np.uint8))


def one_hot_targets(label: int, num_classes: int, T: int) -> np.ndarray:
    """``(C, T)`` target matrix, every column the one-hot code of ``label``."""
    y = np.zeros((num_classes, T))
    y[label] = 1.0
    return y


@dataclass
class LabeledExample:
    input: SpikeTrain
    target: np.ndarray
    label: int

    def __post_init__(self):
        if self.target.shape[1] != self.input.num_steps:
            raise ValueError("input and target must share T")
        if not (np.allclose(self.target.sum(axis=0), 1) and
                np.all((self.target != 0).sum(axis=0) == 1)):
            raise ValueError("every target column must be one-hot")


# -- encoded datasets --------------------------------------------------------

@dataclass
class SpikeDataset:
    """Real-valued features plus a deterministic spike encoder.

    ``rates_fn`` maps a ``(B, d)`` feature block to ``(B, channels)`` firing
    probabilities.  Example ``ids`` seed the per-example spike draws, so a
    subset draws exactly the rasters its parent would.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    T: int
    rates_fn: Callable[[np.ndarray], np.ndarray]
    num_channels: int
    seed: int = 0
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids is None:
            self.ids = np.arange(len(self.labels))
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "SpikeDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return SpikeDataset(self.features[idx], self.labels[idx], self.num_classes, self.T,
                            self.rates_fn, self.num_channels, self.seed, self.ids[idx])

    def encode(self, indices) -> np.ndarray:
        """Spike block ``(T, B, channels)`` for positions ``indices``."""
        idx = np.asarray(indices, dtype=np.int64)
        rates = self.rates_fn(self.features[idx])
        out = np.empty((self.T, len(idx), self.num_channels), dtype=np.float32)
        for b, (i, r) in enumerate(zip(self.ids[idx], rates)):
            out[:, b, :] = example_rng(self.seed, int(i)).random((self.T, r.size)) < r
        return out

    def example(self, index: int) -> LabeledExample:
        x = self.encode([index])[:, 0, :].T.astype(np.uint8)
        lab = int(self.labels[index])
        return LabeledExample(SpikeTrain(x), one_hot_targets(lab, self.num_classes, self.T), lab)

    def targets(self, indices) -> np.ndarray:
        """One-hot ``(B, C)`` rows; constant over time."""
        return np.eye(self.num_classes)[self.labels[np.asarray(indices, dtype=np.int64)]]


def concat(datasets: Sequence[SpikeDataset]) -> SpikeDataset:
    first = datasets[0]
    return SpikeDataset(np.concatenate([d.features for d in datasets]),
                        np.concatenate([d.labels for d in datasets]),
                        first.num_classes, first.T, first.rates_fn, first.num_channels,
                        first.seed, np.concatenate([d.ids for d in datasets]))


def two_moons_dataset(n_per_class=200, noise_sigma=0.1, T=100, neurons_per_dim=10,
                      seed=0, code: PopulationCode | None = None, r_max=0.9):
    points, labels = gen_two_moons(n_per_class, noise_sigma, seed)
    code = code or PopulationCode.fit(points, neurons_per_dim, r_max=r_max)
    return points_dataset(points, labels, code, T, seed), code


def points_dataset(points, labels, code: PopulationCode, T: int, seed: int,
                   num_classes: int = 2) -> SpikeDataset:
    return SpikeDataset(np.asarray(points, dtype=np.float64), labels, num_classes, T,
                        code.rates, code.num_channels, seed)


def _pixel_rates(block: np.ndarray) -> np.ndarray:
    return block.reshape(block.shape[0], -1)


def image_dataset(images, labels, T=50, seed=0, num_classes=10) -> SpikeDataset:
    images = np.asarray(images, dtype=np.float64)
    if images.min() < 0 or images.max() > 1:
        raise ValueError("pixel values must lie in [0, 1]")
    flat = images.reshape(len(images), -1)
    return SpikeDataset(flat, labels, num_classes, T, _pixel_rates, flat.shape[1], seed)


def synthetic_patterns(n_per_class=50, num_classes=2, channels=40, T=50, active=8,
                       high=0.5, low=0.02, seed=0) -> SpikeDataset:
    """Each class drives its own disjoint block of ``active`` channels at rate ``high``."""
    if active * num_classes > channels:
        raise ValueError("not enough channels for disjoint class patterns")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5]))
    perm = rng.permutation(channels)
    protos = np.full((num_classes, channels), low)
    for c in range(num_classes):
        protos[c, perm[c * active:(c + 1) * active]] = high
    labels = np.repeat(np.arange(num_classes), n_per_class)
    return SpikeDataset(protos[labels], labels, num_classes, T, lambda r: r, channels, seed)


# -- IDX files ---------------------------------------------------------------

class IdxError(ValueError):
    """Malformed IDX input."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic: int) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than IDX magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    n = int(np.prod(dims))
    if len(raw) - header < n:
        raise IdxTruncatedError(f"{path}: expected {n} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Images scaled to [0, 1] as ``(N, rows, cols)`` float64 and int64 labels."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an uncompressed IDX file."""
    a = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | a.ndim) + struct.pack(">" + "I" * a.ndim, *a.shape)
    Path(path).write_bytes(header + a.tobytes())


def save_mnist_idx(images_path, labels_path, images, labels) -> None:
    write_idx(images_path, np.rint(np.asarray(images) * 255.0))
    write_idx(labels_path, labels)


# -- task streams ------------------------------------------------------------

@dataclass
class TaskStream:
    tasks: list[SpikeDataset]
    class_sets: list[tuple[int, ...]]
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("task stream must not be empty")

    def __len__(self) -> int:
        return len(self.tasks)


def split_tasks(dataset: SpikeDataset, class_pairs: Sequence[Sequence[int]] = DEFAULT_PAIRS,
                allow_repeats: bool = False) -> TaskStream:
    """One task per class set, filtered by label, in the given order."""
    sets = [tuple(int(c) for c in cs) for cs in class_pairs]
    if not sets:
        raise ValueError("need at least one class set")
    seen: set[int] = set()
    for cs in sets:
        if not cs:
            raise ValueError("empty class set")
        if not allow_repeats and seen.intersection(cs):
            raise ValueError(f"class set {cs} overlaps an earlier task")
        seen.update(cs)
    tasks = [dataset.subset(np.flatnonzero(np.isin(dataset.labels, cs))) for cs in sets]
    return TaskStream(tasks, sets)
