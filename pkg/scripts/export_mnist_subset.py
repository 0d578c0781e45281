"""Write the bundled mlxtend MNIST sample as IDX files, split 400/100 per class.

Point BAYES_SNN_MNIST_DIR at the output directory to train on it.
"""
import argparse
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

from bayes_snn.data import save_mnist_idx
from bayes_snn.experiment import MNIST_FILES


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--train-per-class", type=int, default=400)
    args = ap.parse_args()
    X, y = mnist_data()
    X = X.reshape(-1, 28, 28) / 255.0
    train, test = [], []
    for c in range(10):
        idx = np.flatnonzero(y == c)
        train.extend(idx[:args.train_per_class])
        test.extend(idx[args.train_per_class:])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, sel in (("train", train), ("test", test)):
        img, lab = MNIST_FILES[split]
        save_mnist_idx(out / img, out / lab, X[sel], y[sel].astype(np.uint8))
        print(split, len(sel))


if __name__ == "__main__":
    main()
