"""Split MNIST: final per-task accuracy for several continual learners.

    python scripts/split_mnist_continual.py --learners bayes_gauss freq_plain
"""
import argparse
import json
import time

import numpy as np

from bayes_snn.config import load_config
from bayes_snn.continual import final_summary, run_task_stream
from bayes_snn.experiment import build_data, build_network, continual_config, task_streams

# learner -> overrides applied on top of the config
PRESETS = {
    "bayes_gauss": {},
    "freq_plain": {"continual.learner": "freq_plain", "continual.coreset_fraction": 0.0,
                   "train.eta": 0.01},
    "freq_plain_coreset": {"continual.learner": "freq_plain", "train.eta": 0.01},
    "freq_ewc": {"continual.learner": "freq_ewc", "continual.coreset_fraction": 0.0, "train.eta": 0.01},
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/split_mnist.yaml")
    ap.add_argument("--learners", nargs="+", default=["bayes_gauss", "freq_plain"],
                    choices=sorted(PRESETS))
    args = ap.parse_args()
    base = load_config(args.config)
    data = build_data(base)
    for name in args.learners:
        cfg = base.replace(**PRESETS[name])
        train, test = task_streams(cfg, data)
        net, ro = build_network(cfg, data.train.num_channels, data.train.num_classes)
        t0 = time.perf_counter()
        _, state = run_task_stream(train, test, net, ro, continual_config(cfg))
        accs = [r["accuracy"] for r in final_summary(state)]
        print(json.dumps({"learner": name, "task_acc": accs, "mean": float(np.mean(accs)),
                          "seconds": round(time.perf_counter() - t0, 1)}), flush=True)


if __name__ == "__main__":
    main()
