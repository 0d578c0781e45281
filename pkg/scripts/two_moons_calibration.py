"""Sweep the temperature rho on two moons and compare OOD confidence with SGD.

    python scripts/two_moons_calibration.py --config configs/two_moons.yaml
"""
import argparse
import json

from bayes_snn.config import load_config
from bayes_snn.experiment import build_data, run_offline
from bayes_snn.metrics import evaluate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/two_moons.yaml")
    ap.add_argument("--rhos", type=float, nargs="+", default=[1e-4, 1e-3, 1e-2, 1.0])
    ap.add_argument("--sgd-eta", type=float, default=0.05)
    args = ap.parse_args()

    base = load_config(args.config)
    data = build_data(base)
    runs = {"sgd": base.replace(**{"train.trainer": "sgd", "train.eta": args.sgd_eta})}
    runs.update({f"rho={r:g}": base.replace(**{"train.rho": r}) for r in args.rhos})
    rows = []
    for name, cfg in runs.items():
        r = run_offline(cfg, data)
        tr = evaluate(r.network, r.readouts, r.learner, data.train, cfg.train.n_samples)
        te = evaluate(r.network, r.readouts, r.learner, data.test, cfg.train.n_samples)
        ood = evaluate(r.network, r.readouts, r.learner, data.ood, cfg.train.n_samples)
        rows.append({"run": name, "train_acc": tr.accuracy, "test_acc": te.accuracy,
                     "test_ece": te.ece, "ood_conf": ood.mean_confidence})
        print(json.dumps(rows[-1]), flush=True)


if __name__ == "__main__":
    main()
