"""Write mlxtend's bundled 5000-digit MNIST subset as IDX files.

    python tools/mnist5k_to_idx.py OUT_DIR

Produces ``train-images-idx3-ubyte`` and ``train-labels-idx1-ubyte`` so the
directory can be passed as ``--dataset mnist:OUT_DIR``.
"""

import sys
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

from outskirt.data_io import write_idx


def convert(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    X, y = mnist_data()
    images = np.asarray(X, dtype=np.uint8).reshape(-1, 28, 28)
    write_idx(out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte", images, y)
    return out


if __name__ == "__main__":
    print(convert(sys.argv[1] if len(sys.argv) > 1 else "data/mnist5k"))
