"""Build datasets, networks and learners from an ``ExperimentConfig``."""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bayes import BernoulliLearner, GaussianLearner, init_gaussian
from .config import ExperimentConfig
from .continual import ContinualConfig, TacosConfig
from .data import (PopulationCode, SpikeDataset, TaskStream, gen_two_moons, image_dataset,
                   load_mnist_idx, points_dataset, split_tasks, synthetic_patterns)
from .frequentist import make_learner, random_init
from .local import ReadoutMatrices
from .srm import KernelConfig, LayerTopology, SrmNetwork
from .training import Learner, LoopOptions, stream

MNIST_ENV = "BAYES_SNN_MNIST_DIR"
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DataUnavailable(RuntimeError):
    pass


@dataclass
class Data:
    train: SpikeDataset
    test: SpikeDataset
    ood: SpikeDataset | None = None
    code: PopulationCode | None = None
    source: str = ""


# -- datasets ----------------------------------------------------------------

def ood_grid(points: np.ndarray, n: int, extent, min_distance: float) -> np.ndarray:
    """``n x n`` grid over ``extent`` restricted to points far from all of ``points``."""
    xs = np.linspace(extent[0], extent[1], n)
    ys = np.linspace(extent[2], extent[3], n)
    grid = np.array(list(itertools.product(xs, ys)))
    d = np.min(np.linalg.norm(grid[:, None, :] - points[None, :, :], axis=-1), axis=1)
    return grid[d > min_distance]


def _find_idx(directory: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (directory / name).exists():
            return directory / name
    return None


def load_mnist_arrays(mnist_dir: str | None = None):
    """``{split: (images, labels)}`` from IDX files, or the bundled mlxtend sample.

    The mlxtend sample holds 500 training images per class and no separate
    test split; callers carve both splits out of it.
    """
    directory = mnist_dir or os.environ.get(MNIST_ENV)
    if directory:
        d = Path(directory)
        out = {}
        for split, (img, lab) in MNIST_FILES.items():
            ip, lp = _find_idx(d, img), _find_idx(d, lab)
            if ip is not None and lp is not None:
                out[split] = load_mnist_idx(ip, lp)
        if "train" in out:
            return out, f"idx:{d}"
        raise DataUnavailable(f"no MNIST IDX files found in {d}")
    try:
        from mlxtend.data import mnist_data
    except ImportError:
        raise DataUnavailable(f"set {MNIST_ENV} to a directory of MNIST IDX files "
                              "or install mlxtend") from None
    X, y = mnist_data()
    return {"train": (X.reshape(-1, 28, 28) / 255.0, y.astype(np.int64))}, "mlxtend"


def _per_class(labels, k: int, rng, exclude=None) -> np.ndarray:
    picks = []
    for c in np.unique(labels):
        pos = np.flatnonzero(labels == c)
        if exclude is not None:
            pos = np.setdiff1d(pos, exclude)
        if pos.size < k:
            raise DataUnavailable(f"class {c} has {pos.size} examples, {k} requested")
        picks.append(np.sort(rng.choice(pos, size=k, replace=False)))
    return np.concatenate(picks)


def build_data(cfg: ExperimentConfig) -> Data:
    d = cfg.dataset
    if d.kind == "two_moons":
        pts, labels = gen_two_moons(d.n_per_class, d.noise_sigma, d.seed)
        code = PopulationCode.fit(pts, d.neurons_per_dim, r_max=d.r_max)
        train = points_dataset(pts, labels, code, d.T, d.seed)
        tp, tl = gen_two_moons(d.test_per_class, d.noise_sigma, d.seed + 1)
        test = points_dataset(tp, tl, code, d.T, d.seed + 1)
        grid = ood_grid(pts, d.ood_grid, d.ood_extent, d.ood_min_distance)
        ood = points_dataset(grid, np.zeros(len(grid), dtype=np.int64), code, d.T, d.seed + 2)
        return Data(train, test, ood, code, "two_moons")
    if d.kind == "synthetic_patterns":
        common = dict(num_classes=d.num_classes, channels=d.channels, T=d.T, active=d.active,
                      high=d.high, low=d.low)
        train = synthetic_patterns(d.n_per_class, seed=d.seed, **common)
        test = synthetic_patterns(d.test_per_class, seed=d.seed, **common)
        # Same prototypes, fresh spike draws.
        test.seed = d.seed + 1
        return Data(train, test, source="synthetic_patterns")
    arrays, source = load_mnist_arrays(d.mnist_dir)
    rng = stream(d.seed, 0x3157)
    Xtr, ytr = arrays["train"]
    tr = _per_class(ytr, d.train_per_class, rng)
    if "test" in arrays:
        Xte, yte = arrays["test"]
        te = _per_class(yte, d.test_per_class, rng)
    else:
        Xte, yte = Xtr, ytr
        te = _per_class(ytr, d.test_per_class, rng, exclude=tr)
    train = image_dataset(Xtr[tr], ytr[tr], d.T, d.seed)
    test = image_dataset(Xte[te], yte[te], d.T, d.seed + 1)
    return Data(train, test, source=source)


def task_streams(cfg: ExperimentConfig, data: Data) -> tuple[TaskStream, TaskStream]:
    pairs = [tuple(cs) for cs in cfg.dataset.class_pairs]
    return split_tasks(data.train, pairs), split_tasks(data.test, pairs)


# -- models ------------------------------------------------------------------

def build_network(cfg: ExperimentConfig, input_size: int, num_classes: int
                  ) -> tuple[SrmNetwork, ReadoutMatrices]:
    m = cfg.model
    dtype = np.dtype(m.dtype).type
    topo = LayerTopology(input_size, [int(n) for n in m.layer_sizes])
    kernel = KernelConfig(m.tau_mem, m.tau_syn, m.tau_ref, m.kernel_kind, m.ref_gain)
    net = SrmNetwork(topo, kernel, binary=m.binary, thresholds=m.threshold, dtype=dtype)
    readouts = ReadoutMatrices.build(topo, num_classes, m.readout_seed, dtype)
    return net, readouts


def build_offline_learner(cfg: ExperimentConfig, network: SrmNetwork) -> Learner:
    t = cfg.train
    n = network.topology.num_synapses
    if t.trainer in ("sgd", "ste"):
        random_init(network, cfg.seed, t.init_scale)
        return make_learner(network, t.trainer, t.eta, cfg.seed, t.init_scale)
    if t.trainer == "bayes_gauss":
        post, prior = init_gaussian(n, cfg.seed, t.prior_precision, t.prior_mean,
                                    t.init_scale, network.dtype)
        return GaussianLearner(post, prior, t.eta, t.rho, t.samples_per_step)
    return BernoulliLearner(np.zeros(n, dtype=network.dtype), np.zeros(n, dtype=network.dtype),
                            t.eta, t.rho, t.tau, t.samples_per_step)


def loop_options(cfg: ExperimentConfig) -> LoopOptions:
    t = cfg.train
    return LoopOptions(t.batch_size, t.sample_per_sequence, t.replica_group, t.workers)


def continual_config(cfg: ExperimentConfig) -> ContinualConfig:
    t, c = cfg.train, cfg.continual
    tacos = TacosConfig(c.tacos_gamma, c.tacos_kappa, c.tacos_delta_nu, c.tacos_rate_threshold,
                        c.tacos_window)
    return ContinualConfig(
        learner=c.learner, eta=t.eta, rho=t.rho, tau=t.tau, alpha=c.alpha,
        coreset_fraction=c.coreset_fraction, epochs_per_task=c.epochs_per_task,
        batch_size=t.batch_size, n_samples=t.n_samples, mode=t.mode, seed=cfg.seed,
        init_scale=t.init_scale, prior_mean=t.prior_mean, prior_precision=t.prior_precision,
        samples_per_step=t.samples_per_step, ewc_implicit=c.ewc_implicit, tacos=tacos,
        workers=t.workers, replica_group=t.replica_group)


@dataclass
class OfflineRun:
    cfg: ExperimentConfig
    data: Data
    network: SrmNetwork
    readouts: ReadoutMatrices
    learner: Learner
    losses: list


def run_offline(cfg: ExperimentConfig, data: Data | None = None) -> OfflineRun:
    """Train the configured offline learner; ``data`` may be shared across runs."""
    from .training import fit

    data = data or build_data(cfg)
    network, readouts = build_network(cfg, data.train.num_channels, data.train.num_classes)
    learner = build_offline_learner(cfg, network)
    losses = fit(learner, network, readouts, data.train, cfg.train.epochs, loop_options(cfg),
                 cfg.seed)
    return OfflineRun(cfg, data, network, readouts, learner, losses)
