"""Build IDX files from the 10,000 MNIST digits shipped in the npm ``mnist`` package.

Usage::

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python scripts/build_mnist_subset.py package/src/digits data/mnist

The package stores each digit class as a JSON list of pixel intensities
rounded to three decimals of ``byte / 255``; ``round(v * 255)`` recovers the
original bytes exactly. Each class is split 80/20 into train/test with a fixed
seed and the train and test sets are shuffled.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from dstee.data import write_idx


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--test-fraction", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    train_x, train_y, test_x, test_y = [], [], [], []
    for digit in range(10):
        raw = np.array(json.loads((args.digits_dir / f"{digit}.json").read_text())["data"])
        images = np.rint(raw * 255).astype(np.uint8).reshape(-1, 28, 28)
        order = rng.permutation(len(images))
        n_test = int(round(len(images) * args.test_fraction))
        test_x.append(images[order[:n_test]])
        train_x.append(images[order[n_test:]])
        test_y.append(np.full(n_test, digit, np.uint8))
        train_y.append(np.full(len(images) - n_test, digit, np.uint8))

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for split, xs, ys in (("train", train_x, train_y), ("t10k", test_x, test_y)):
        x, y = np.concatenate(xs), np.concatenate(ys)
        perm = rng.permutation(len(x))
        write_idx(args.out_dir / f"{split}-images-idx3-ubyte.gz", x[perm])
        write_idx(args.out_dir / f"{split}-labels-idx1-ubyte.gz", y[perm])
        print(f"{split}: {len(x)} images")


if __name__ == "__main__":
    main()
