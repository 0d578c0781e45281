"""Accuracy and calibration metrics over prediction tables.

Confidence bins partition ``(0, 1]`` into ``((m-1)/M, m/M]`` for
``m = 1..M``; a confidence of exactly 0 goes to bin 1.  All functions here are
post-hoc and work on plain arrays.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bayes import hard_predict, predict

DEFAULT_BINS = 10


def bin_index(confidences, M: int = DEFAULT_BINS) -> np.ndarray:
    """Zero-based bin of every confidence.

    Boundaries are compared against ``m / M`` directly instead of computing
    ``ceil(x * M)``, which misplaces values such as 0.3 (``0.3 * 10 > 3``).
    """
    if M < 1:
        raise ValueError("need at least one bin")
    c = np.asarray(confidences, dtype=np.float64)
    if c.size and (np.any(c < 0) or np.any(c > 1) or not np.all(np.isfinite(c))):
        raise ValueError("confidences must lie in [0, 1]")
    edges = np.arange(1, M + 1) / M
    return np.searchsorted(edges, c, side="left")


@dataclass
class BinnedCalibration:
    M: int
    counts: np.ndarray
    accuracy: np.ndarray    # NaN for empty bins
    confidence: np.ndarray  # NaN for empty bins

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.M + 1) / self.M


def bin_predictions(confidences, correct, M: int = DEFAULT_BINS) -> BinnedCalibration:
    conf = np.asarray(confidences, dtype=np.float64)
    ok = np.asarray(correct, dtype=np.float64)
    if conf.shape != ok.shape:
        raise ValueError("confidences and correctness flags differ in length")
    idx = bin_index(conf, M)
    counts = np.bincount(idx, minlength=M)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.bincount(idx, weights=ok, minlength=M) / counts
        mean_conf = np.bincount(idx, weights=conf, minlength=M) / counts
    empty = counts == 0
    acc[empty] = np.nan
    mean_conf[empty] = np.nan
    return BinnedCalibration(M, counts, acc, mean_conf)


def ece(binned: BinnedCalibration) -> float:
    """Count-weighted mean of ``|conf - acc|`` over non-empty bins."""
    n = binned.total
    if n == 0:
        return 0.0
    full = binned.counts > 0
    gaps = np.abs(binned.confidence[full] - binned.accuracy[full])
    return float(np.sum(binned.counts[full] * gaps) / n)


def reliability_diagram(binned: BinnedCalibration) -> list[dict]:
    """Plot-ready rows, one per bin, with an over/under-confidence flag."""
    rows = []
    edges = binned.edges
    for m in range(binned.M):
        count = int(binned.counts[m])
        acc, conf = binned.accuracy[m], binned.confidence[m]
        if count == 0:
            status = "empty"
        elif acc < conf:
            status = "overconfident"
        elif acc > conf:
            status = "underconfident"
        else:
            status = "calibrated"
        rows.append({
            "bin": m + 1,
            "lo": float(edges[m]),
            "hi": float(edges[m + 1]),
            "center": float(0.5 * (edges[m] + edges[m + 1])),
            "count": count,
            "accuracy": None if count == 0 else float(acc),
            "confidence": None if count == 0 else float(conf),
            "status": status,
        })
    return rows


def ood_histogram(confidences, M: int = DEFAULT_BINS) -> np.ndarray:
    """Counts of max-probabilities per confidence bin."""
    return np.bincount(bin_index(confidences, M), minlength=M)


@dataclass
class TimeCurves:
    accuracy: np.ndarray
    ece: np.ndarray
    mean_confidence: np.ndarray

    def rows(self) -> list[dict]:
        return [{"t": t + 1, "accuracy": float(a), "ece": float(e), "mean_confidence": float(c)}
                for t, (a, e, c) in enumerate(zip(self.accuracy, self.ece, self.mean_confidence))]


def curves_from_prefix(prefix_probs: np.ndarray, labels, M: int = DEFAULT_BINS) -> TimeCurves:
    """Per-step metrics from ``(T, N, C)`` running-average probabilities."""
    labels = np.asarray(labels)
    acc, err, conf = [], [], []
    for p in prefix_probs:
        cls, c = hard_predict(p)
        ok = cls == labels
        acc.append(ok.mean())
        err.append(ece(bin_predictions(c, ok, M)))
        conf.append(c.mean())
    return TimeCurves(np.array(acc), np.array(err), np.array(conf))


def time_resolved(network, readouts, learner, dataset, n_samples: int = 10,
                  mode: str = "committee", seed: int = 0, M: int = DEFAULT_BINS) -> TimeCurves:
    """Accuracy, ECE and mean confidence of the decision available after each step."""
    if dataset.T < 1:
        raise ValueError("T must be >= 1")
    prefix = predict(network, readouts, learner, dataset, mode, n_samples, seed,
                     time_resolved=True)
    return curves_from_prefix(prefix, dataset.labels, M)


@dataclass
class CalibrationReport:
    accuracy: float
    ece: float
    binned: BinnedCalibration
    confidence_histogram: np.ndarray
    predictions: np.ndarray = field(repr=False)  # (N,) hard class
    confidences: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    time_curves: TimeCurves | None = None
    meta: dict = field(default_factory=dict)

    @property
    def mean_confidence(self) -> float:
        return float(self.confidences.mean()) if self.confidences.size else 0.0

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "ece": self.ece,
            "mean_confidence": self.mean_confidence,
            "num_examples": int(self.labels.size),
            "bins": reliability_diagram(self.binned),
            "confidence_histogram": self.confidence_histogram.tolist(),
            "meta": self.meta,
        }
        if self.time_curves is not None:
            out["time_resolved"] = self.time_curves.rows()
        return out

    def write(self, out_dir) -> None:
        """``report.json``, ``bins.csv``, ``predictions.csv`` and optionally ``time.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        write_csv(out / "bins.csv", reliability_diagram(self.binned))
        write_csv(out / "predictions.csv", [
            {"index": i, "label": int(y), "prediction": int(p), "confidence": repr(float(c))}
            for i, (y, p, c) in enumerate(zip(self.labels, self.predictions, self.confidences))])
        if self.time_curves is not None:
            write_csv(out / "time.csv", self.time_curves.rows())


def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def report_from_probs(probs: np.ndarray, labels, M: int = DEFAULT_BINS,
                      prefix_probs: np.ndarray | None = None, meta: dict | None = None
                      ) -> CalibrationReport:
    labels = np.asarray(labels)
    cls, conf = hard_predict(probs)
    ok = cls == labels
    binned = bin_predictions(conf, ok, M)
    curves = curves_from_prefix(prefix_probs, labels, M) if prefix_probs is not None else None
    return CalibrationReport(float(ok.mean()) if ok.size else 0.0, ece(binned), binned,
                             ood_histogram(conf, M), cls, conf, labels, curves, dict(meta or {}))


def evaluate(network, readouts, learner, dataset, n_samples: int = 10, mode: str = "committee",
             seed: int = 0, M: int = DEFAULT_BINS, with_time: bool = False) -> CalibrationReport:
    """Predict on ``dataset`` and summarise accuracy and calibration."""
    if not learner.bayesian:
        n_samples = 1
    prefix = predict(network, readouts, learner, dataset, mode, n_samples, seed,
                     time_resolved=True)
    meta = {"mode": mode, "samples": n_samples, "seed": seed, "bins": M}
    return report_from_probs(prefix[-1], dataset.labels, M, prefix if with_time else None, meta)
