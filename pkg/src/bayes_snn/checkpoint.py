"""Checkpoints: a JSON manifest plus one raw little-endian tensor file.

Layout of a checkpoint directory::

    manifest.json   sorted keys, format version, config echo, tensor index
    tensors.bin     concatenated raw arrays, in manifest order

Loading rejects unknown manifest fields and unknown format versions.  Saving a
loaded checkpoint reproduces both files byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bayes import BernoulliLearner, GaussianLearner, GaussianPosterior
from .continual import CoresetStore, EwcAnchor, EwcLearner, FimDiag, StreamState
from .frequentist import SgdLearner, SteLearner
from .training import Learner

FORMAT_VERSION = 1
MANIFEST_KEYS = {"format_version", "kind", "topology", "readout_seed", "num_classes", "config",
                 "tensors", "stream", "meta"}
TENSOR_KEYS = {"name", "dtype", "shape", "offset", "nbytes"}
DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    topology: dict
    readout_seed: int
    num_classes: int
    config: dict
    tensors: dict[str, np.ndarray]
    stream: dict | None = None
    meta: dict = field(default_factory=dict)

    def manifest(self) -> tuple[dict, bytes]:
        index, blobs, offset = [], [], 0
        for name in sorted(self.tensors):
            a = np.asarray(self.tensors[name])
            key = a.dtype.name
            if key not in DTYPES:
                raise CheckpointError(f"tensor {name!r}: unsupported dtype {a.dtype}")
            raw = np.ascontiguousarray(a, dtype=DTYPES[key]).tobytes()
            index.append({"name": name, "dtype": key, "shape": list(a.shape),
                          "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        man = {"format_version": FORMAT_VERSION, "kind": self.kind, "topology": self.topology,
               "readout_seed": self.readout_seed, "num_classes": self.num_classes,
               "config": self.config, "tensors": index, "stream": self.stream,
               "meta": self.meta}
        return man, b"".join(blobs)


def save(ckpt: Checkpoint, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    man, blob = ckpt.manifest()
    text = json.dumps(man, indent=1, sort_keys=True, allow_nan=False) + "\n"
    # Write tensors first so a manifest never points at a missing payload.
    (d / "tensors.bin").write_bytes(blob)
    (d / "manifest.json").write_text(text)
    return d


def load(directory) -> Checkpoint:
    d = Path(directory)
    try:
        man = json.loads((d / "manifest.json").read_text())
        blob = (d / "tensors.bin").read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"incomplete checkpoint at {d}: {exc.filename}") from None
    extra = set(man) - MANIFEST_KEYS
    if extra:
        raise CheckpointError(f"unknown manifest fields {sorted(extra)}")
    missing = MANIFEST_KEYS - set(man)
    if missing:
        raise CheckpointError(f"manifest lacks {sorted(missing)}")
    if man["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {man['format_version']}")
    tensors = {}
    for entry in man["tensors"]:
        if set(entry) != TENSOR_KEYS:
            raise CheckpointError(f"bad tensor entry {entry}")
        if entry["dtype"] not in DTYPES:
            raise CheckpointError(f"unsupported dtype {entry['dtype']}")
        a, b = entry["offset"], entry["offset"] + entry["nbytes"]
        if b > len(blob):
            raise CheckpointError(f"tensor {entry['name']!r} runs past the payload")
        arr = np.frombuffer(blob[a:b], dtype=DTYPES[entry["dtype"]])
        tensors[entry["name"]] = arr.astype(entry["dtype"]).reshape(entry["shape"])
    return Checkpoint(man["kind"], man["topology"], man["readout_seed"], man["num_classes"],
                      man["config"], tensors, man["stream"], man["meta"])


# -- learner state <-> tensors ----------------------------------------------

def learner_tensors(learner: Learner) -> dict[str, np.ndarray]:
    out = {k: np.array(v) for k, v in learner.arrays().items()}
    if isinstance(learner, GaussianLearner):
        out["prior_mean"] = learner.prior.mean.copy()
        out["prior_precision"] = learner.prior.precision.copy()
    elif isinstance(learner, BernoulliLearner):
        out["prior_logits"] = learner.prior_logits.copy()
    if isinstance(learner, EwcLearner):
        for i, a in enumerate(learner.anchors):
            out[f"anchor{i:03d}_weights"] = a.weights.copy()
            out[f"anchor{i:03d}_fim"] = a.fim.values.copy()
    return out


def restore_learner(learner: Learner, tensors: dict[str, np.ndarray]) -> Learner:
    """Load tensors into a freshly built learner of the same kind."""
    own = {k: v for k, v in tensors.items() if k in learner.arrays()}
    missing = set(learner.arrays()) - set(own)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors {sorted(missing)} for {learner.kind}")
    learner.load_arrays(own)
    if isinstance(learner, GaussianLearner):
        learner.prior = GaussianPosterior(tensors["prior_mean"].copy(),
                                          tensors["prior_precision"].copy())
    elif isinstance(learner, BernoulliLearner):
        learner.prior_logits = tensors["prior_logits"].copy()
    if isinstance(learner, EwcLearner):
        learner.anchors = []
        i = 0
        while f"anchor{i:03d}_weights" in tensors:
            learner.anchors.append(EwcAnchor(tensors[f"anchor{i:03d}_weights"].copy(),
                                             FimDiag(tensors[f"anchor{i:03d}_fim"].copy(), i)))
            i += 1
    return learner


def learner_kind(learner: Learner) -> str:
    if isinstance(learner, SteLearner):
        return "ste"
    if isinstance(learner, EwcLearner):
        return "freq_ewc"
    if isinstance(learner, SgdLearner):
        return "sgd"
    return learner.kind


def stream_tensors(state: StreamState) -> tuple[dict, dict[str, np.ndarray]]:
    tensors = {f"coreset{i:03d}": np.asarray(ix, dtype=np.int64)
               for i, ix in enumerate(state.coresets.indices)}
    meta = {"task": state.task, "epoch": state.epoch, "fraction": state.coresets.fraction,
            "num_coresets": len(state.coresets.indices), "history": state.history}
    return meta, tensors


def restore_stream(meta: dict, tensors: dict[str, np.ndarray]) -> StreamState:
    store = CoresetStore(meta["fraction"],
                         [tensors[f"coreset{i:03d}"].copy() for i in range(meta["num_coresets"])])
    return StreamState(meta["task"], meta["epoch"], store, [dict(r) for r in meta["history"]])
