"""Command line entry point: ``train``, ``eval``, ``continual`` and ``encode``.

Failures print one JSON object on stderr and exit nonzero (2 for bad
configuration or arguments, 1 otherwise).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import checkpoint as ck
from .config import ConfigError, ExperimentConfig, from_dict, load_config
from .continual import build_learner, final_summary, run_task_stream
from .experiment import (build_data, build_network, build_offline_learner, continual_config,
                         loop_options, task_streams)
from .metrics import evaluate, write_csv
from .training import train_epoch

log = logging.getLogger("bayes_snn")

FREQUENTIST = ("sgd", "ste", "freq_plain", "freq_ewc", "tacos")


class UsageError(ValueError):
    pass


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        over["out"] = args.out
    if getattr(args, "rho", None) is not None:
        over["train.rho"] = args.rho
    if getattr(args, "samples", None) is not None:
        over["train.n_samples"] = args.samples
    if getattr(args, "mode", None) is not None:
        over["train.mode"] = args.mode
    if getattr(args, "epochs", None) is not None:
        over["train.epochs"] = args.epochs
    return cfg.replace(**over) if over else cfg


def _topology_echo(network, readouts) -> dict:
    t = network.topology
    return {"input_size": t.input_size, "layer_sizes": list(t.layer_sizes),
            "binary": network.binary, "thresholds": list(network.thresholds),
            "num_synapses": t.num_synapses}


def _config_echo(cfg) -> dict:
    """Config stored in checkpoints; the output location is not model state."""
    d = cfg.to_dict()
    d.pop("out")
    return d


def _save(out: Path, kind: str, cfg, network, readouts, learner, stream=None) -> None:
    tensors = ck.learner_tensors(learner)
    stream_meta = None
    if stream is not None:
        stream_meta, extra = ck.stream_tensors(stream)
        tensors.update(extra)
    ck.save(ck.Checkpoint(kind, _topology_echo(network, readouts), readouts.seed,
                          readouts.num_classes, _config_echo(cfg), tensors, stream_meta),
            out / "checkpoint")


def cmd_train(args) -> dict:
    cfg = _config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    data = build_data(cfg)
    network, readouts = build_network(cfg, data.train.num_channels, data.train.num_classes)
    learner = build_offline_learner(cfg, network)
    opts = loop_options(cfg)
    rows = []
    for e in range(cfg.train.epochs):
        loss = train_epoch(learner, network, readouts, data.train, opts, cfg.seed, (e,))
        rows.append({"epoch": e + 1, "loss": repr(loss)})
        log.info("epoch %d loss %.4f", e + 1, loss)
    _write_rows(out / "train_log.csv", ["epoch", "loss"], rows)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    _save(out, cfg.train.trainer, cfg, network, readouts, learner)
    return {"checkpoint": str(out / "checkpoint"), "epochs": cfg.train.epochs}


def _write_rows(path: Path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        w.writerows(rows)


def _restore(ckpt_dir):
    ckpt = ck.load(ckpt_dir)
    cfg = from_dict(ckpt.config)
    data = build_data(cfg)
    network, readouts = build_network(cfg, data.train.num_channels, data.train.num_classes)
    if ckpt.kind.startswith("continual:"):
        learner = build_learner(network, continual_config(cfg))
    else:
        learner = build_offline_learner(cfg, network)
    ck.restore_learner(learner, ckpt.tensors)
    return ckpt, cfg, data, network, readouts, learner


def cmd_eval(args) -> dict:
    ckpt_dir = Path(args.checkpoint)
    ckpt, cfg, data, network, readouts, learner = _restore(ckpt_dir)
    samples = args.samples if args.samples is not None else cfg.train.n_samples
    mode = args.mode or cfg.train.mode
    base_kind = ckpt.kind.split(":")[-1]
    if base_kind in FREQUENTIST and samples != 1:
        if args.samples is not None:
            raise UsageError(f"{ckpt.kind} checkpoints hold one weight vector; use --samples 1")
        samples = 1
    dataset = {"train": data.train, "test": data.test, "ood": data.ood}.get(args.split)
    if dataset is None:
        raise UsageError(f"split {args.split!r} is not available for {cfg.dataset.kind}")
    seed = args.seed if args.seed is not None else cfg.seed
    rep = evaluate(network, readouts, learner, dataset, samples, mode, seed, cfg.train.bins,
                   with_time=True)
    rep.meta.update({"split": args.split, "checkpoint_kind": ckpt.kind})
    out = Path(args.out) if args.out else ckpt_dir.parent / f"eval_{args.split}"
    rep.write(out)
    return {"out": str(out), "accuracy": rep.accuracy, "ece": rep.ece,
            "mean_confidence": rep.mean_confidence}


def cmd_continual(args) -> dict:
    cfg = _config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    data = build_data(cfg)
    train, test = task_streams(cfg, data)
    network, readouts = build_network(cfg, data.train.num_channels, data.train.num_classes)
    ccfg = continual_config(cfg)
    learner = build_learner(network, ccfg)
    state = None
    if args.resume:
        ckpt = ck.load(out / "checkpoint")
        if ckpt.config != _config_echo(cfg):
            raise UsageError("checkpoint was written with a different configuration")
        ck.restore_learner(learner, ckpt.tensors)
        state = ck.restore_stream(ckpt.stream, ckpt.tensors)
    kind = f"continual:{ccfg.learner}"

    def on_unit(lrn, st):
        _save(out, kind, cfg, network, readouts, lrn, st)
        _write_history(out, st)

    learner, state = run_task_stream(train, test, network, readouts, ccfg, learner, state,
                                     args.stop_after, on_unit)
    _write_history(out, state)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return {"out": str(out), "tasks_done": state.task, "final": final_summary(state)}


def _write_history(out: Path, state) -> None:
    cols = ["task", "epoch", "eval_task", "seen", "accuracy", "ece", "mean_confidence"]
    fmt = lambda r: {k: repr(v) if isinstance(v, float) else v for k, v in r.items()}  # noqa: E731
    _write_rows(out / "history.csv", cols, [fmt(r) for r in state.history])
    _write_rows(out / "final.csv", cols, [fmt(r) for r in final_summary(state)])


def cmd_encode(args) -> dict:
    cfg = _config(args)
    data = build_data(cfg)
    dataset = {"train": data.train, "test": data.test, "ood": data.ood}.get(args.split)
    if dataset is None:
        raise UsageError(f"split {args.split!r} is not available for {cfg.dataset.kind}")
    n = min(args.count, len(dataset))
    x = dataset.encode(np.arange(n))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"example": int(b), "label": int(dataset.labels[b]), "t": int(t), "channel": int(c)}
            for t, b, c in zip(*np.nonzero(x))]
    rows.sort(key=lambda r: (r["example"], r["t"], r["channel"]))
    write_csv(out / "spikes.csv", rows)
    summary = {"examples": n, "T": dataset.T, "channels": dataset.num_channels,
               "mean_rate": float(x.mean()) if x.size else 0.0, "split": args.split}
    (out / "encode.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bayes-snn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out", help="output directory")

    t = sub.add_parser("train", help="offline training")
    common(t)
    t.add_argument("--rho", type=float)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=["train", "test", "ood"])
    e.add_argument("--samples", type=int)
    e.add_argument("--mode", choices=["committee", "ensemble"])
    e.add_argument("--seed", type=int, help="seed of the posterior sample set")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("continual", help="train over a task stream")
    common(c)
    c.add_argument("--rho", type=float)
    c.add_argument("--samples", type=int)
    c.add_argument("--mode", choices=["committee", "ensemble"])
    c.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint")
    c.add_argument("--stop-after", type=int, help="stop after this many task epochs in total")
    c.set_defaults(func=cmd_continual)

    n = sub.add_parser("encode", help="dump spike encodings")
    common(n)
    n.add_argument("--split", default="train", choices=["train", "test", "ood"])
    n.add_argument("--count", type=int, default=4)
    n.set_defaults(func=cmd_encode)
    return p


def main(argv=None) -> int:
    p = parser()
    try:
        args = p.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            return _fail("usage", "invalid arguments", 2)
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except ConfigError as exc:
        return _fail("config", exc.message, 2, field=exc.field)
    except (UsageError, ck.CheckpointError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except Exception as exc:  # noqa: BLE001 - reported as JSON, never swallowed silently
        return _fail(type(exc).__name__, str(exc), 1)
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


def _fail(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
