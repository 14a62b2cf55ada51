"""Write a small MNIST train/test pair as IDX files.

The full MNIST archives are not reachable from every machine. The
``mlxtend`` wheel on PyPI ships 5000 real MNIST training images
(500 per digit); this script splits them 400/100 per class and writes
standard gzipped IDX files that ``sib.datasets.find_mnist`` picks up.

    python scripts/prepare_mnist_subset.py --out data/mnist

If you have the official files, point ``SIB_DATA_ROOT`` at them instead.
"""

import argparse
import glob
import gzip
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from sib.datasets import write_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_bundle() -> np.ndarray:
    try:
        import mlxtend.data  # noqa: F401
        path = Path(mlxtend.data.__file__).parent / "data" / "mnist_5k.csv.gz"
        raw = path.read_bytes()
    except ImportError:
        with tempfile.TemporaryDirectory() as tmp:
            subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                            "-d", tmp, "mlxtend"], check=True)
            with zipfile.ZipFile(glob.glob(f"{tmp}/mlxtend-*.whl")[0]) as zf:
                raw = zf.read(MEMBER)
    return np.loadtxt(io.StringIO(gzip.decompress(raw).decode()), delimiter=",")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    table = read_bundle()
    x = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    y = table[:, -1].astype(np.uint8)
    rng = np.random.default_rng(args.seed)
    train, test = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(y == c))
        test.extend(idx[:args.test_per_class])
        train.extend(idx[args.test_per_class:])
    train, test = rng.permutation(train), rng.permutation(test)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", x[train])
    write_idx(out / "train-labels-idx1-ubyte.gz", y[train])
    write_idx(out / "t10k-images-idx3-ubyte.gz", x[test])
    write_idx(out / "t10k-labels-idx1-ubyte.gz", y[test])
    print(f"wrote {len(train)} train / {len(test)} test images to {out}")


if __name__ == "__main__":
    main()
