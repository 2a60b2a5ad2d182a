"""Write a small real-MNIST subset as IDX files.

The 5000-sample MNIST extract shipped inside the ``mlxtend`` wheel is
shuffled with a fixed seed, split 4000/1000 and written in the standard IDX
layout, so ``load_mnist`` reads it like the full dataset.  Useful where the
full download is unavailable.

    python3 scripts/make_mnist_subset.py --wheel mlxtend-0.24.0-py3-none-any.whl --out data/mnist5k
"""
import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from lutlearn.data import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wheel", required=True, help="path to an mlxtend wheel (pip download mlxtend --no-deps)")
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    with zipfile.ZipFile(args.wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    table = np.loadtxt(io.StringIO(raw.decode()), delimiter=",", dtype=np.int64)
    # pixels first, label in the last column; rows are grouped by class
    perm = np.random.default_rng(args.seed).permutation(len(table))
    table = table[perm]
    labels, images = table[:, -1], table[:, :-1].reshape(-1, 28, 28)
    n_train = len(labels) - args.n_test
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte", images[:n_train])
    write_idx(out / "train-labels-idx1-ubyte", labels[:n_train])
    write_idx(out / "t10k-images-idx3-ubyte", images[n_train:])
    write_idx(out / "t10k-labels-idx1-ubyte", labels[n_train:])
    print(f"wrote {n_train} training and {args.n_test} test samples to {out}")


if __name__ == "__main__":
    main()
